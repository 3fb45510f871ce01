use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use super::config::{BenchmarkConfig, EstimatorKind};
use super::rng::{trial_seed, GaussianStream};
use crate::baselines::{Ekf, GaussianBelief, NonlinearMhe, Ukf};
use crate::diagnostics::{bounds_monitor, observability_gramian, Bands, BoundsLog, TraceStep};
use crate::linalg::{eigen_extremes, psd_sqrt};
use crate::model::{ModelKind, SystemModel};
use crate::scdmhe::{ArrivalCost, ScdMhe, StepOutcome};
use crate::{Estimator, Result};

/// Simulated ground truth for one trial.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    /// `x_0 … x_N`
    pub states: Vec<DVector<f64>>,
    /// `y_0 … y_{N−1}`
    pub measurements: Vec<DVector<f64>>,
    /// `u_0 … u_{N−1}`
    pub inputs: Vec<DVector<f64>>,
}

/// Simulates `N = cfg.steps` steps. At each step the measurement noise
/// `v_k` is drawn before the process noise `w_k`. Covariances may be
/// singular (including zero).
pub fn simulate_truth<M: SystemModel + ?Sized>(model: &M, cfg: &BenchmarkConfig, seed: u64) -> Result<Truth> {
    let mut noise = GaussianStream::new(seed);
    let q_sqrt = psd_sqrt(&cfg.q);
    let r_sqrt = psd_sqrt(&cfg.r);
    let mut x = cfg.x0_true.clone();
    let mut truth = Truth {
        states: Vec::with_capacity(cfg.steps + 1),
        measurements: Vec::with_capacity(cfg.steps),
        inputs: Vec::with_capacity(cfg.steps),
    };
    for k in 0..cfg.steps {
        let u = cfg.input.input(k, model.input_dim());
        let v = noise.correlated(&r_sqrt);
        let w = noise.correlated(&q_sqrt);
        truth.measurements.push(model.measurement(&x, k)? + v);
        let next = model.dynamics(&x, &u, k)? + w;
        truth.states.push(std::mem::replace(&mut x, next));
        truth.inputs.push(u);
    }
    truth.states.push(x);
    Ok(truth)
}

/// Per-step SCD-MHE record for `k ≥ ℓ − 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRow {
    pub k: usize,
    pub i_star: Option<usize>,
    pub delta_final: f64,
    pub p_min_eig: f64,
    pub p_max_eig: f64,
    /// Smallest Gramian eigenvalue along the true trajectory.
    pub alpha_hat: f64,
}

#[derive(Clone, Debug)]
pub struct EstimatorRun {
    pub kind: EstimatorKind,
    /// `x̂_0 … x̂_{N−1}`; empty past a failure.
    pub estimates: Vec<DVector<f64>>,
    /// Wall-clock seconds spent inside each `step` call.
    pub step_seconds: Vec<f64>,
    pub failure: Option<String>,
    /// Largest KKT residual over every QP solved (MHE estimators only).
    pub max_qp_residual: Option<f64>,
    /// Steps where the inner solver raised a diagnostic flag.
    pub flagged_steps: usize,
    /// `i*` per post-horizon step (MHE estimators only).
    pub iterations: Vec<usize>,
}

impl EstimatorRun {
    /// Sum of squared errors per component and sample count over `k ∈ [ℓ, N−1]`.
    pub fn squared_errors(&self, truth: &Truth, horizon: usize) -> (DVector<f64>, usize) {
        let n = truth.states[0].len();
        let mut acc = DVector::zeros(n);
        let mut count = 0;
        for k in horizon..truth.measurements.len() {
            let e = &truth.states[k] - &self.estimates[k];
            acc += e.component_mul(&e);
            count += 1;
        }
        (acc, count)
    }

    /// Per-component post-horizon RMSE.
    pub fn rmse(&self, truth: &Truth, horizon: usize) -> DVector<f64> {
        let (acc, count) = self.squared_errors(truth, horizon);
        (acc / count as f64).map(f64::sqrt)
    }

    /// Mean post-horizon step time in seconds.
    pub fn mean_step_seconds(&self, horizon: usize) -> f64 {
        let tail = &self.step_seconds[horizon.min(self.step_seconds.len())..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub truth: Truth,
    pub runs: Vec<EstimatorRun>,
    pub diagnostics: Vec<DiagnosticsRow>,
    /// SCD-MHE boundedness log, when it ran.
    pub bounds: Option<BoundsLog>,
    /// Wall-clock seconds for the whole trial, simulation included.
    pub wall_seconds: f64,
}

impl TrialResult {
    pub fn failed(&self) -> bool {
        self.runs.iter().any(|r| r.failure.is_some())
    }

    pub fn failure_summary(&self) -> String {
        self.runs
            .iter()
            .filter_map(|r| r.failure.as_ref().map(|f| format!("{}: {f}", r.kind)))
            .collect::<Vec<_>>()
            .join("; ")
    }

    pub fn run(&self, kind: EstimatorKind) -> Option<&EstimatorRun> {
        self.runs.iter().find(|r| r.kind == kind)
    }
}

/// Feeds the truth to `est` one step at a time; `observe` sees the estimator
/// after every successful step.
fn drive<E: Estimator>(
    kind: EstimatorKind,
    est: &mut E,
    truth: &Truth,
    timing: bool,
    mut observe: impl FnMut(&E, usize),
) -> EstimatorRun {
    let n = truth.measurements.len();
    let mut run = EstimatorRun {
        kind,
        estimates: Vec::with_capacity(n),
        step_seconds: Vec::with_capacity(n),
        failure: None,
        max_qp_residual: None,
        flagged_steps: 0,
        iterations: Vec::new(),
    };
    for k in 0..n {
        let u_prev = k.checked_sub(1).map(|j| &truth.inputs[j]);
        let y = &truth.measurements[k];
        let (result, secs) = if timing {
            let start = Instant::now();
            let r = est.step(k, u_prev, y);
            (r, start.elapsed().as_secs_f64())
        } else {
            (est.step(k, u_prev, y), f64::NAN)
        };
        match result {
            Ok(x) if x.iter().all(|v| v.is_finite()) => {
                run.estimates.push(x);
                run.step_seconds.push(secs);
                observe(est, k);
            }
            Ok(_) => {
                run.failure = Some(format!("step {k}: non-finite estimate"));
                break;
            }
            Err(e) => {
                run.failure = Some(format!("step {k}: {e}"));
                break;
            }
        }
    }
    run
}

fn record_outcome(run: &mut EstimatorRun, outcome: &StepOutcome) {
    let worst = outcome.qp_residuals.iter().copied().fold(0.0, f64::max);
    run.max_qp_residual = Some(run.max_qp_residual.map_or(worst, |w: f64| w.max(worst)));
    run.iterations.push(outcome.i_star);
    if outcome.flagged {
        run.flagged_steps += 1;
    }
}

/// Collects MHE outcomes during a drive so that they can be folded into the
/// run afterwards.
fn mhe_outcomes<S>(
    est: &crate::scdmhe::MovingHorizonEstimator<ModelKind, S>,
    horizon: usize,
    k: usize,
    sink: &mut Vec<(usize, Option<StepOutcome>, Option<usize>)>,
) where
    S: crate::scdmhe::WindowSolver<ModelKind>,
{
    if k + 1 == horizon {
        sink.push((k, None, est.converged_iterations()));
    } else if k >= horizon {
        sink.push((k, est.last_outcome().cloned(), None));
    }
}

/// Runs every enabled estimator on one simulated trial.
pub fn run_trial(cfg: &BenchmarkConfig, trial: usize) -> Result<TrialResult> {
    let wall = Instant::now();
    let model = cfg.build_model();
    let seed = trial_seed(cfg.seed, trial);
    let truth = simulate_truth(&model, cfg, seed)?;
    let horizon = cfg.mhe.horizon;
    let prior = GaussianBelief::new(cfg.x0_hat.clone(), cfg.p0.clone())?;

    let mut runs = Vec::new();
    let mut scd_outcomes = Vec::new();
    for &kind in &cfg.estimators {
        let noise = cfg.noise_spec()?;
        let run = match kind {
            EstimatorKind::Ekf => {
                let mut est = Ekf::new(model.clone(), noise, prior.clone());
                drive(kind, &mut est, &truth, cfg.timing, |_, _| {})
            }
            EstimatorKind::Ukf => {
                let mut est = Ukf::new(model.clone(), noise, prior.clone(), cfg.ukf)?;
                drive(kind, &mut est, &truth, cfg.timing, |_, _| {})
            }
            EstimatorKind::Nmhe => {
                let arrival = ArrivalCost::new(cfg.x0_hat.clone(), cfg.p0.clone())?;
                let mut est = NonlinearMhe::new(model.clone(), noise, cfg.mhe, arrival, cfg.sqp)?;
                let mut sink = Vec::new();
                let mut run = drive(kind, &mut est, &truth, cfg.timing, |e, k| {
                    mhe_outcomes(e, horizon, k, &mut sink)
                });
                for (_, outcome, _) in &sink {
                    if let Some(o) = outcome {
                        record_outcome(&mut run, o);
                    }
                }
                run
            }
            EstimatorKind::Scdmhe => {
                let arrival = ArrivalCost::new(cfg.x0_hat.clone(), cfg.p0.clone())?;
                let mut est = ScdMhe::new(model.clone(), noise, cfg.mhe, arrival)?;
                let mut run = drive(kind, &mut est, &truth, cfg.timing, |e, k| {
                    mhe_outcomes(e, horizon, k, &mut scd_outcomes)
                });
                for (_, outcome, _) in &scd_outcomes {
                    if let Some(o) = outcome {
                        record_outcome(&mut run, o);
                    }
                }
                run
            }
        };
        runs.push(run);
    }

    let alpha = true_alpha(&model, cfg, &truth);
    let mut diagnostics = Vec::new();
    let mut trace = Vec::new();
    let scd_ran = cfg.estimators.contains(&EstimatorKind::Scdmhe);
    let mut outcomes = scd_outcomes.into_iter().peekable();
    for k in horizon - 1..cfg.steps {
        let entry = match outcomes.peek() {
            Some((j, _, _)) if *j == k => outcomes.next(),
            _ => None,
        };
        let mut row = DiagnosticsRow {
            k,
            i_star: None,
            delta_final: f64::NAN,
            p_min_eig: f64::NAN,
            p_max_eig: f64::NAN,
            alpha_hat: alpha[k + 1 - horizon],
        };
        match entry {
            Some((_, Some(o), _)) => {
                let (lo, hi) = eigen_extremes(&o.new_arrival.p);
                row.i_star = Some(o.i_star);
                row.delta_final = o.displacements.last().copied().unwrap_or(f64::NAN);
                row.p_min_eig = lo;
                row.p_max_eig = hi;
                trace.push(TraceStep {
                    k,
                    truth: truth.states[k].clone(),
                    estimate: o.x_hat.clone(),
                    input: truth.inputs[k].clone(),
                    arrival_cov: Some(o.new_arrival.p.clone()),
                });
            }
            Some((_, None, i_star)) => row.i_star = i_star,
            None => {}
        }
        diagnostics.push(row);
    }
    let bounds = (scd_ran && !trace.is_empty()).then(|| bounds_monitor(&model, &trace, cfg.steps, &Bands::default()));

    Ok(TrialResult {
        trial,
        seed,
        truth,
        runs,
        diagnostics,
        bounds,
        wall_seconds: wall.elapsed().as_secs_f64(),
    })
}

/// `α̂` for every window ending at `k ∈ [ℓ−1, N−1]`, evaluated along the
/// true states; `NaN` where the SCDC factors or `R⁻¹` are unavailable.
fn true_alpha(model: &ModelKind, cfg: &BenchmarkConfig, truth: &Truth) -> Vec<f64> {
    let horizon = cfg.mhe.horizon;
    let r: Vec<DMatrix<f64>> = vec![cfg.r.clone(); horizon];
    (horizon - 1..cfg.steps)
        .map(|k| {
            let first = k + 1 - horizon;
            let a: Result<Vec<_>> = (first..k)
                .map(|j| model.scdc(&truth.states[j], &truth.inputs[j], j).map(|(a, _)| a))
                .collect();
            let c: Result<Vec<_>> = (first..=k)
                .map(|j| model.output_matrix(&truth.states[j], j))
                .collect();
            match (a, c) {
                (Ok(a), Ok(c)) => observability_gramian(&a, &c, &r, first)
                    .map(|rep| rep.alpha_hat)
                    .unwrap_or(f64::NAN),
                _ => f64::NAN,
            }
        })
        .collect()
}
