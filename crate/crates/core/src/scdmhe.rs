//! Iterated SCDC moving-horizon estimation.
//!
//! At each step `k ≥ ℓ` the previous converged window is shifted by one stage
//! and its terminal state is propagated through `f` to seed the new window.
//! The SCDC matrices are then evaluated along the current trajectory, the
//! resulting equality-constrained QP is solved, and the loop repeats until the
//! stacked state trajectory moves by less than `ε` or `ρ` QPs have been
//! solved. Afterwards the arrival cost slides forward with a Riccati update
//! built from the discarded stage.
//!
//! Steps `k < ℓ` are served by an EKF, whose estimates also form the first
//! window at `k = ℓ − 1`.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::baselines::{Ekf, GaussianBelief};
use crate::eqqp::{assemble_qp, HorizonProblem, KktOptions, KktSolver, QpLayout};
use crate::linalg::{is_positive_definite, repair_covariance, spd_inverse, symmetrize};
use crate::model::{NoiseSpec, SystemModel};
use crate::{Error, Estimator, Result};

/// States, process noises and measurement noises of one window, stage 0 oldest.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowEstimate {
    pub states: Vec<DVector<f64>>,
    pub process_noises: Vec<DVector<f64>>,
    pub meas_noises: Vec<DVector<f64>>,
}

impl WindowEstimate {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    /// `[χ…, ω…, ν…]`
    pub fn flatten(&self) -> DVector<f64> {
        let parts = self
            .states
            .iter()
            .chain(&self.process_noises)
            .chain(&self.meas_noises);
        let data: Vec<f64> = parts.flat_map(|v| v.iter().copied()).collect();
        DVector::from_vec(data)
    }

    pub fn unflatten(layout: &QpLayout, z: &DVector<f64>) -> Result<Self> {
        if z.len() != layout.n_z() {
            return Err(Error::dim("flattened window", layout.n_z(), z.len()));
        }
        let QpLayout { n, p, horizon } = *layout;
        let take = |at: usize, len: usize| z.rows(at, len).into_owned();
        Ok(Self {
            states: (0..horizon).map(|j| take(layout.state(j), n)).collect(),
            process_noises: (0..horizon - 1)
                .map(|j| take(layout.process_noise(j), n))
                .collect(),
            meas_noises: (0..horizon).map(|j| take(layout.meas_noise(j), p)).collect(),
        })
    }

    /// The `nℓ` stacked state trajectory.
    pub fn stacked_states(&self) -> DVector<f64> {
        stack(&self.states)
    }

    pub fn terminal(&self) -> &DVector<f64> {
        self.states.last().expect("window has at least two states")
    }

    /// A window whose noises reproduce `states` exactly under the model.
    pub fn consistent_with<M: SystemModel + ?Sized>(
        model: &M,
        states: Vec<DVector<f64>>,
        data: &WindowData,
    ) -> Result<Self> {
        let first = data.first_step;
        let mut process_noises = Vec::with_capacity(states.len().saturating_sub(1));
        for j in 0..states.len() - 1 {
            let pred = model.dynamics(&states[j], &data.inputs[j], first + j)?;
            process_noises.push(&states[j + 1] - pred);
        }
        let mut meas_noises = Vec::with_capacity(states.len());
        for (j, x) in states.iter().enumerate() {
            meas_noises.push(&data.measurements[j] - model.measurement(x, first + j)?);
        }
        Ok(Self {
            states,
            process_noises,
            meas_noises,
        })
    }
}

fn stack(vs: &[DVector<f64>]) -> DVector<f64> {
    DVector::from_vec(vs.iter().flat_map(|v| v.iter().copied()).collect())
}

/// Prior on the first window state: anchor `x̄` and covariance `P ≻ 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct ArrivalCost {
    pub x_bar: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl ArrivalCost {
    pub fn new(x_bar: DVector<f64>, p: DMatrix<f64>) -> Result<Self> {
        if p.shape() != (x_bar.len(), x_bar.len()) {
            return Err(Error::dim("arrival covariance", x_bar.len(), p.nrows()));
        }
        if !is_positive_definite(&symmetrize(&p)) {
            return Err(Error::NotPositiveDefinite {
                what: "arrival covariance P".into(),
            });
        }
        Ok(Self { x_bar, p })
    }
}

/// Discrete-time Riccati step
/// `P⁺ = ĀPĀᵀ − ĀPC̄ᵀ(C̄PC̄ᵀ + R)⁻¹C̄PĀᵀ + Q`, symmetrized and checked.
pub fn riccati_update(
    p: &DMatrix<f64>,
    a_bar: &DMatrix<f64>,
    c_bar: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let innovation = c_bar * p * c_bar.transpose() + r;
    let s_inv = spd_inverse(&innovation, "innovation covariance C̄PC̄ᵀ + R")?;
    let apc = a_bar * p * c_bar.transpose();
    let next = a_bar * p * a_bar.transpose() - &apc * s_inv * apc.transpose() + q;
    repair_covariance(&next, "arrival covariance")
}

/// Slides the arrival cost by one stage. `a_bar`, `c_bar` are the factors of
/// the discarded stage, `q`, `r` its covariances, `anchor` the new prior mean.
pub fn update_arrival(
    prev: &ArrivalCost,
    a_bar: &DMatrix<f64>,
    c_bar: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    anchor: DVector<f64>,
) -> Result<ArrivalCost> {
    Ok(ArrivalCost {
        x_bar: anchor,
        p: riccati_update(&prev.p, a_bar, c_bar, q, r)?,
    })
}

/// Where the next window's prior mean comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ArrivalAnchor {
    /// Second state of the converged window, `x̄_{k+2−ℓ} = x̂_{k,2−ℓ}`.
    Smoothed,
    /// Exact marginalization of the discarded stage under the stage model the
    /// QP used: the prior is corrected with `y_{k+1−ℓ}` and propagated,
    /// `x̄⁺ = Ā(x̄ + K(y − C̄x̄ − e)) + d` with `K = PC̄ᵀ(C̄PC̄ᵀ + R)⁻¹`.
    /// Reduces to the Kalman filter on linear-Gaussian models.
    #[default]
    Marginalized,
}

/// Affine model of one window stage as seen by the QP:
/// `χ⁺ = a χ + drift`, `y = c χ + offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageModel {
    pub a: DMatrix<f64>,
    pub drift: DVector<f64>,
    pub c: DMatrix<f64>,
    pub offset: DVector<f64>,
}

/// Mean of the marginal prior on the next window's first state.
pub fn marginal_anchor(
    prev: &ArrivalCost,
    stage: &StageModel,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let p = &prev.p;
    let s_inv = spd_inverse(&(&stage.c * p * stage.c.transpose() + r), "innovation covariance C̄PC̄ᵀ + R")?;
    let innovation = y - &stage.c * &prev.x_bar - &stage.offset;
    let corrected = &prev.x_bar + p * stage.c.transpose() * s_inv * innovation;
    Ok(&stage.a * corrected + &stage.drift)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Window length `ℓ ≥ 2`.
    pub horizon: usize,
    /// Iteration cap `ρ ≥ 1`.
    pub max_iterations: usize,
    /// Displacement tolerance `ε > 0`.
    pub tolerance: f64,
    /// Added to every inverse-covariance block of the Hessian.
    pub hessian_regularization: f64,
    pub anchor: ArrivalAnchor,
    pub kkt: KktOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            max_iterations: 15,
            tolerance: 1e-6,
            hessian_regularization: 0.0,
            anchor: ArrivalAnchor::default(),
            kkt: KktOptions::default(),
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be at least 2, got {}",
                self.horizon
            )));
        }
        if self.max_iterations < 1 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tolerance must be positive, got {}",
                self.tolerance
            )));
        }
        if !(self.hessian_regularization >= 0.0 && self.hessian_regularization.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "hessian_regularization must be finite and non-negative, got {}",
                self.hessian_regularization
            )));
        }
        Ok(())
    }
}

/// Everything a window solve needs besides the initial trajectory.
#[derive(Clone, Debug)]
pub struct WindowData {
    /// Absolute step of stage 0, `k + 1 − ℓ`.
    pub first_step: usize,
    pub arrival: ArrivalCost,
    /// `u_{k+1−ℓ} … u_{k−1}`
    pub inputs: Vec<DVector<f64>>,
    /// `y_{k+1−ℓ} … y_k`
    pub measurements: Vec<DVector<f64>>,
    pub q: Vec<DMatrix<f64>>,
    pub r: Vec<DMatrix<f64>>,
    pub regularization: f64,
}

impl WindowData {
    pub fn horizon(&self) -> usize {
        self.measurements.len()
    }
}

/// Result of one inner solve over a window.
#[derive(Clone, Debug)]
pub struct InnerSolve {
    pub window: WindowEstimate,
    pub displacements: Vec<f64>,
    pub qp_residuals: Vec<f64>,
    /// False when the inner loop stopped on something other than its
    /// displacement test (iteration cap is not a failure for SCD-MHE).
    pub flagged: bool,
}

/// Inner optimizer of a moving-horizon estimator.
pub trait WindowSolver<M: SystemModel>: Send {
    fn solve_window(
        &mut self,
        model: &M,
        data: &WindowData,
        initial: Vec<DVector<f64>>,
        config: &EstimatorConfig,
    ) -> Result<InnerSolve>;

    /// Stage model at the converged state `x` of a discarded stage; its
    /// `a`, `c` are the `Ā`, `C̄` of the arrival Riccati update.
    fn stage_model(&self, model: &M, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<StageModel>;
}

/// The SCDC fixed-point iteration: one equality QP per pass with the
/// coefficient matrices frozen at the previous pass's trajectory.
#[derive(Debug)]
pub struct ScdcIteration {
    kkt: KktSolver,
}

impl ScdcIteration {
    pub fn new(kkt: KktOptions) -> Self {
        Self {
            kkt: KktSolver::new(kkt),
        }
    }

    /// One pass: evaluate `A_j, B_j, C_j` along `trajectory`, solve the QP,
    /// and return the new window, its displacement `δ` and KKT residual.
    pub fn iterate_once<M: SystemModel + ?Sized>(
        &mut self,
        model: &M,
        data: &WindowData,
        trajectory: &[DVector<f64>],
    ) -> Result<(WindowEstimate, f64, f64)> {
        let horizon = data.horizon();
        if trajectory.len() != horizon {
            return Err(Error::dim("window trajectory", horizon, trajectory.len()));
        }
        let first = data.first_step;
        let mut a = Vec::with_capacity(horizon - 1);
        let mut drift = Vec::with_capacity(horizon - 1);
        for j in 0..horizon - 1 {
            let (aj, bj) = model.scdc(&trajectory[j], &data.inputs[j], first + j)?;
            drift.push(&bj * &data.inputs[j]);
            a.push(aj);
        }
        let c = trajectory
            .iter()
            .enumerate()
            .map(|(j, x)| model.output_matrix(x, first + j))
            .collect::<Result<Vec<_>>>()?;
        let problem = HorizonProblem {
            x_bar: data.arrival.x_bar.clone(),
            p: data.arrival.p.clone(),
            q: data.q.clone(),
            r: data.r.clone(),
            a,
            drift,
            c,
            y: data.measurements.clone(),
            regularization: data.regularization,
        };
        let qp = assemble_qp(&problem)?;
        let sol = self.kkt.solve(&qp)?;
        let window = WindowEstimate::unflatten(qp.layout.as_ref().expect("structured"), &sol.z_star)?;
        let delta = (window.stacked_states() - stack(trajectory)).norm();
        Ok((window, delta, sol.kkt_residual))
    }
}

impl Default for ScdcIteration {
    fn default() -> Self {
        Self::new(KktOptions::default())
    }
}

impl<M: SystemModel> WindowSolver<M> for ScdcIteration {
    fn solve_window(
        &mut self,
        model: &M,
        data: &WindowData,
        initial: Vec<DVector<f64>>,
        config: &EstimatorConfig,
    ) -> Result<InnerSolve> {
        let mut trajectory = initial;
        let mut displacements = Vec::new();
        let mut qp_residuals = Vec::new();
        let mut window = None;
        for _ in 0..config.max_iterations {
            let (w, delta, residual) = self.iterate_once(model, data, &trajectory)?;
            displacements.push(delta);
            qp_residuals.push(residual);
            trajectory.clone_from(&w.states);
            window = Some(w);
            if delta < config.tolerance {
                break;
            }
        }
        Ok(InnerSolve {
            window: window.expect("max_iterations >= 1"),
            displacements,
            qp_residuals,
            flagged: false,
        })
    }

    fn stage_model(&self, model: &M, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<StageModel> {
        let (a, b) = model.scdc(x, u, k)?;
        let c = model.output_matrix(x, k)?;
        Ok(StageModel {
            a,
            drift: b * u,
            offset: DVector::zeros(c.nrows()),
            c,
        })
    }
}

/// Initial trajectory for step `k`: the previous window shifted by one stage,
/// with the new leading state `f(x̂_{k−1,0}, u_{k−1}, k−1)`.
pub fn warm_start<M: SystemModel + ?Sized>(
    model: &M,
    prev_states: &[DVector<f64>],
    u_prev: &DVector<f64>,
    k: usize,
) -> Result<Vec<DVector<f64>>> {
    let last = prev_states
        .last()
        .ok_or_else(|| Error::InvalidArgument("empty previous window".into()))?;
    let mut next: Vec<DVector<f64>> = prev_states[1..].to_vec();
    next.push(model.dynamics(last, u_prev, k.saturating_sub(1))?);
    Ok(next)
}

/// What one post-horizon step produced.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub k: usize,
    /// `x̂_k`, the terminal state of the converged window.
    pub x_hat: DVector<f64>,
    pub window: WindowEstimate,
    /// Number of QPs solved, `1 ≤ i* ≤ ρ`.
    pub i_star: usize,
    /// `δ_{k|1} … δ_{k|i*}`
    pub displacements: Vec<f64>,
    /// KKT residual of every QP solved this step.
    pub qp_residuals: Vec<f64>,
    /// Arrival cost for the window at `k + 1`.
    pub new_arrival: ArrivalCost,
    /// Inner solver diagnostic (line-search failure for the SQP baseline).
    pub flagged: bool,
}

#[derive(Clone, Debug)]
struct Primed {
    states: Vec<DVector<f64>>,
    arrival: ArrivalCost,
}

/// Online moving-horizon estimator parameterized by its inner solver.
pub struct MovingHorizonEstimator<M: SystemModel + Clone, S: WindowSolver<M>> {
    model: M,
    noise: NoiseSpec,
    config: EstimatorConfig,
    solver: S,
    bootstrap: Ekf<M>,
    prior: ArrivalCost,
    inputs: VecDeque<DVector<f64>>,
    measurements: VecDeque<DVector<f64>>,
    boot_trajectory: Vec<DVector<f64>>,
    primed: Option<Primed>,
    last: Option<StepOutcome>,
    next_k: usize,
}

/// The SCD-MHE estimator.
pub type ScdMhe<M> = MovingHorizonEstimator<M, ScdcIteration>;

impl<M: SystemModel + Clone> ScdMhe<M> {
    pub fn new(model: M, noise: NoiseSpec, config: EstimatorConfig, prior: ArrivalCost) -> Result<Self> {
        let solver = ScdcIteration::new(config.kkt);
        MovingHorizonEstimator::with_solver(model, noise, config, prior, solver)
    }
}

impl<M: SystemModel + Clone, S: WindowSolver<M>> MovingHorizonEstimator<M, S> {
    pub fn with_solver(
        model: M,
        noise: NoiseSpec,
        config: EstimatorConfig,
        prior: ArrivalCost,
        solver: S,
    ) -> Result<Self> {
        config.validate()?;
        let n = model.state_dim();
        if prior.x_bar.len() != n {
            return Err(Error::dim("prior mean", n, prior.x_bar.len()));
        }
        if noise.state_dim() != n {
            return Err(Error::dim("process covariance", n, noise.state_dim()));
        }
        if noise.output_dim() != model.output_dim() {
            return Err(Error::dim("measurement covariance", model.output_dim(), noise.output_dim()));
        }
        let belief = GaussianBelief::new(prior.x_bar.clone(), prior.p.clone())?;
        let bootstrap = Ekf::new(model.clone(), noise.clone(), belief);
        Ok(Self {
            model,
            noise,
            config,
            solver,
            bootstrap,
            prior,
            inputs: VecDeque::new(),
            measurements: VecDeque::new(),
            boot_trajectory: Vec::new(),
            primed: None,
            last: None,
            next_k: 0,
        })
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    /// Outcome of the most recent post-horizon step.
    pub fn last_outcome(&self) -> Option<&StepOutcome> {
        self.last.as_ref()
    }

    /// Arrival cost the next window will use, once primed.
    pub fn arrival(&self) -> Option<&ArrivalCost> {
        self.primed.as_ref().map(|p| &p.arrival)
    }

    /// `i*` of the latest step: `ρ` right after priming, per the algorithm's
    /// initialization.
    pub fn converged_iterations(&self) -> Option<usize> {
        match (&self.last, &self.primed) {
            (Some(o), _) => Some(o.i_star),
            (None, Some(_)) => Some(self.config.max_iterations),
            _ => None,
        }
    }

    /// Trajectory of the current window (`ℓ` states), once primed.
    pub fn window_states(&self) -> Option<&[DVector<f64>]> {
        self.primed.as_ref().map(|p| p.states.as_slice())
    }

    /// Primes the estimator at `k = ℓ − 1` with an externally computed
    /// trajectory for `k ∈ {0, …, ℓ−1}`, the inputs `u_0 … u_{ℓ−2}` and the
    /// measurements `y_0 … y_{ℓ−1}`. The trajectory entries are treated as the
    /// reported estimates for those steps. The next call to [`Self::step`]
    /// must be for `k = ℓ`.
    pub fn init_first_window(
        &mut self,
        trajectory: Vec<DVector<f64>>,
        inputs: Vec<DVector<f64>>,
        measurements: Vec<DVector<f64>>,
    ) -> Result<()> {
        let horizon = self.config.horizon;
        if trajectory.len() != horizon {
            return Err(Error::dim("initial trajectory", horizon, trajectory.len()));
        }
        if inputs.len() != horizon - 1 {
            return Err(Error::dim("initial inputs", horizon - 1, inputs.len()));
        }
        if measurements.len() != horizon {
            return Err(Error::dim("initial measurements", horizon, measurements.len()));
        }
        self.inputs = inputs.into();
        self.measurements = measurements.into();
        let arrival = self.slide_arrival(&self.prior.clone(), &trajectory, 0)?;
        self.primed = Some(Primed {
            states: trajectory,
            arrival,
        });
        self.last = None;
        self.next_k = horizon;
        Ok(())
    }

    /// Arrival cost for the window after the one starting at `first_step`.
    fn slide_arrival(
        &self,
        current: &ArrivalCost,
        states: &[DVector<f64>],
        first_step: usize,
    ) -> Result<ArrivalCost> {
        let stage = self
            .solver
            .stage_model(&self.model, &states[0], &self.inputs[0], first_step)?;
        let r = self.noise.r(first_step);
        let anchor = match self.config.anchor {
            ArrivalAnchor::Smoothed => states[1].clone(),
            ArrivalAnchor::Marginalized => marginal_anchor(current, &stage, &self.measurements[0], r)?,
        };
        update_arrival(current, &stage.a, &stage.c, self.noise.q(first_step), r, anchor)
    }

    fn window_data(&self, k: usize, arrival: ArrivalCost) -> WindowData {
        let horizon = self.config.horizon;
        let first = k + 1 - horizon;
        WindowData {
            first_step: first,
            arrival,
            inputs: self.inputs.iter().cloned().collect(),
            measurements: self.measurements.iter().cloned().collect(),
            q: (0..horizon - 1).map(|j| self.noise.q(first + j).clone()).collect(),
            r: (0..horizon).map(|j| self.noise.r(first + j).clone()).collect(),
            regularization: self.config.hessian_regularization,
        }
    }

    fn push_data(&mut self, u_prev: Option<&DVector<f64>>, y: &DVector<f64>) -> Result<()> {
        let horizon = self.config.horizon;
        if let Some(u) = u_prev {
            if u.len() != self.model.input_dim() {
                return Err(Error::dim("input", self.model.input_dim(), u.len()));
            }
            self.inputs.push_back(u.clone());
            while self.inputs.len() > horizon - 1 {
                self.inputs.pop_front();
            }
        }
        if y.len() != self.model.output_dim() {
            return Err(Error::dim("measurement", self.model.output_dim(), y.len()));
        }
        self.measurements.push_back(y.clone());
        while self.measurements.len() > horizon {
            self.measurements.pop_front();
        }
        Ok(())
    }

    /// One post-horizon step at `k ≥ ℓ`; the buffers must already hold
    /// `u_{k−1}` and `y_k`.
    fn step_window(&mut self, k: usize) -> Result<StepOutcome> {
        let primed = self
            .primed
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("estimator not primed".into()))?;
        let u_prev = self.inputs.back().expect("inputs buffered").clone();
        let initial = warm_start(&self.model, &primed.states, &u_prev, k)?;
        let data = self.window_data(k, primed.arrival.clone());
        let inner = self
            .solver
            .solve_window(&self.model, &data, initial, &self.config)?;
        let x_hat = inner.window.terminal().clone();

        let new_arrival = self.slide_arrival(&data.arrival, &inner.window.states, data.first_step)?;
        self.primed = Some(Primed {
            states: inner.window.states.clone(),
            arrival: new_arrival.clone(),
        });
        Ok(StepOutcome {
            k,
            x_hat,
            i_star: inner.displacements.len(),
            window: inner.window,
            displacements: inner.displacements,
            qp_residuals: inner.qp_residuals,
            new_arrival,
            flagged: inner.flagged,
        })
    }
}

impl<M: SystemModel + Clone, S: WindowSolver<M>> Estimator for MovingHorizonEstimator<M, S> {
    fn step(&mut self, k: usize, u_prev: Option<&DVector<f64>>, y: &DVector<f64>) -> Result<DVector<f64>> {
        if k != self.next_k {
            return Err(Error::InvalidArgument(format!(
                "expected step {}, got {k}",
                self.next_k
            )));
        }
        if k > 0 && u_prev.is_none() {
            return Err(Error::InvalidArgument(format!("missing input u_{} at step {k}", k - 1)));
        }
        self.push_data(u_prev, y)?;
        let horizon = self.config.horizon;
        let x_hat = if k + 1 < horizon {
            let x = self.bootstrap.step(k, u_prev, y)?;
            self.boot_trajectory.push(x.clone());
            x
        } else if k + 1 == horizon {
            let x = self.bootstrap.step(k, u_prev, y)?;
            self.boot_trajectory.push(x.clone());
            let trajectory = std::mem::take(&mut self.boot_trajectory);
            let inputs = self.inputs.iter().cloned().collect();
            let measurements = self.measurements.iter().cloned().collect();
            self.init_first_window(trajectory, inputs, measurements)?;
            x
        } else {
            let outcome = self.step_window(k)?;
            let x = outcome.x_hat.clone();
            self.last = Some(outcome);
            x
        };
        self.next_k = k + 1;
        Ok(x_hat)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LinearModel, Quadrotor};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn riccati_hand_case() {
        let (q1, q2) = (0.01, 0.2);
        let p = riccati_update(
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &DMatrix::from_diagonal(&v(&[q1, q2])),
            &DMatrix::from_element(1, 1, 0.5),
        )
        .unwrap();
        let expected = DMatrix::from_diagonal(&v(&[1.0 / 3.0 + q1, 1.0 + q2]));
        assert!((p - expected).amax() <= 1e-12);
    }

    #[test]
    fn riccati_without_information_is_prediction() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.05, 0.0, 0.98]);
        let p0 = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let q = DMatrix::from_diagonal(&v(&[1e-3, 5e-2]));
        let p = riccati_update(&p0, &a, &DMatrix::zeros(1, 2), &q, &DMatrix::from_element(1, 1, 0.5)).unwrap();
        let expected = &a * &p0 * a.transpose() + &q;
        assert!((p - expected).amax() <= 1e-14);
    }

    #[test]
    fn arrival_update_sets_anchor() {
        let prev = ArrivalCost::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let next = update_arrival(
            &prev,
            &DMatrix::identity(2, 2),
            &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            &DMatrix::identity(2, 2),
            &DMatrix::from_element(1, 1, 0.5),
            v(&[4.0, 5.0]),
        )
        .unwrap();
        assert_eq!(next.x_bar, v(&[4.0, 5.0]));
    }

    #[test]
    fn singular_innovation_is_reported() {
        let err = riccati_update(
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(1, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(1, 1),
        );
        assert!(matches!(err, Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn warm_start_shifts_and_predicts() {
        let model = Quadrotor::default();
        let prev = vec![v(&[1.0, 0.1]), v(&[2.0, 0.2]), v(&[3.0, 0.3])];
        let u = v(&[10.0]);
        let next = warm_start(&model, &prev, &u, 7).unwrap();
        assert_eq!(next[0], prev[1]);
        assert_eq!(next[1], prev[2]);
        assert_eq!(next[2], model.dynamics(&prev[2], &u, 6).unwrap());
    }

    #[test]
    fn flatten_round_trip() {
        let layout = QpLayout::new(2, 1, 3).unwrap();
        let z = DVector::from_fn(layout.n_z(), |i, _| i as f64 * 0.5 - 1.0);
        let w = WindowEstimate::unflatten(&layout, &z).unwrap();
        assert_eq!(w.states.len(), 3);
        assert_eq!(w.process_noises.len(), 2);
        assert_eq!(w.meas_noises.len(), 3);
        assert_eq!(w.flatten(), z);
        assert!(WindowEstimate::unflatten(&layout, &DVector::zeros(3)).is_err());
    }

    fn linear_data(horizon: usize, x_bar: DVector<f64>) -> WindowData {
        WindowData {
            first_step: 0,
            arrival: ArrivalCost::new(x_bar, DMatrix::identity(2, 2)).unwrap(),
            inputs: (0..horizon - 1).map(|j| v(&[(j as f64).sin()])).collect(),
            measurements: (0..horizon).map(|j| v(&[1.0 + 0.1 * j as f64])).collect(),
            q: vec![DMatrix::from_diagonal(&v(&[1e-3, 5e-2])); horizon - 1],
            r: vec![DMatrix::from_element(1, 1, 0.5); horizon],
            regularization: 0.0,
        }
    }

    #[test]
    fn linear_model_reaches_fixed_point_in_one_pass() {
        let model = LinearModel::default();
        let data = linear_data(5, v(&[1.0, 0.0]));
        let mut it = ScdcIteration::default();
        let start: Vec<_> = (0..5).map(|j| v(&[j as f64 * 7.0, -3.0])).collect();
        let (w1, d1, r1) = it.iterate_once(&model, &data, &start).unwrap();
        assert!(d1 > 1.0);
        assert!(r1 <= 1e-9);
        let (w2, d2, _) = it.iterate_once(&model, &data, &w1.states).unwrap();
        assert!(d2 <= 1e-12, "second displacement {d2}");
        let (w3, _, _) = it.iterate_once(&model, &data, &w1.states).unwrap();
        assert_eq!(w2, w3);
    }

    #[test]
    fn iteration_cap_and_infinite_tolerance() {
        let model = Quadrotor::default();
        let horizon = 4;
        let mut data = linear_data(horizon, v(&[50.0, -5.0]));
        data.inputs = (0..horizon - 1).map(|j| v(&[9.81 + 0.5 * (j as f64).sin()])).collect();
        data.measurements = vec![v(&[9.6]); horizon];
        let start = vec![v(&[50.0, -5.0]); horizon];

        let mut cfg = EstimatorConfig {
            horizon,
            max_iterations: 1,
            tolerance: 1e-12,
            ..EstimatorConfig::default()
        };
        let mut s = ScdcIteration::default();
        let out = s.solve_window(&model, &data, start.clone(), &cfg).unwrap();
        assert_eq!(out.displacements.len(), 1);

        cfg.max_iterations = 15;
        cfg.tolerance = f64::INFINITY;
        let out = s.solve_window(&model, &data, start.clone(), &cfg).unwrap();
        assert_eq!(out.displacements.len(), 1);

        cfg.tolerance = 1e-6;
        let out = s.solve_window(&model, &data, start, &cfg).unwrap();
        let i_star = out.displacements.len();
        assert!((1..=15).contains(&i_star));
        if i_star < 15 {
            assert!(out.displacements[i_star - 1] < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        let bad = EstimatorConfig {
            horizon: 1,
            ..EstimatorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig {
            tolerance: 0.0,
            ..EstimatorConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = EstimatorConfig {
            max_iterations: 0,
            ..EstimatorConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn init_rejects_wrong_lengths() {
        let model = LinearModel::default();
        let prior = ArrivalCost::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let cfg = EstimatorConfig {
            horizon: 3,
            ..EstimatorConfig::default()
        };
        let mut est = ScdMhe::new(model, NoiseSpec::quadrotor_benchmark(), cfg, prior).unwrap();
        let err = est.init_first_window(vec![v(&[0.0, 0.0]); 2], vec![v(&[0.0]); 2], vec![v(&[0.0]); 3]);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }
}
