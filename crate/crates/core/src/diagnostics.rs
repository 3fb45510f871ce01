//! Observability Gramian and runtime boundedness checks.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{eigen_extremes, spd_inverse, spectral_norm, symmetrize};
use crate::model::{NoiseSpec, SystemModel};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityReport {
    pub gramian: DMatrix<f64>,
    /// Smallest eigenvalue of the Gramian.
    pub alpha_hat: f64,
    /// Absolute step of the window's first stage.
    pub window_start: usize,
}

/// `𝒪 = Σ_j Φ_jᵀ C_jᵀ R_j⁻¹ C_j Φ_j` with `Φ_0 = I`, `Φ_{j+1} = A_j Φ_j`.
///
/// `a` has `ℓ−1` entries, `c` and `r` have `ℓ`.
pub fn observability_gramian(
    a: &[DMatrix<f64>],
    c: &[DMatrix<f64>],
    r: &[DMatrix<f64>],
    window_start: usize,
) -> Result<ObservabilityReport> {
    let horizon = c.len();
    if horizon == 0 {
        return Err(Error::dim("output matrices", 1, 0));
    }
    if a.len() + 1 != horizon {
        return Err(Error::dim("transition matrices", horizon - 1, a.len()));
    }
    if r.len() != horizon {
        return Err(Error::dim("measurement covariances", horizon, r.len()));
    }
    let n = c[0].ncols();
    let mut phi = DMatrix::<f64>::identity(n, n);
    let mut gramian = DMatrix::<f64>::zeros(n, n);
    for j in 0..horizon {
        if c[j].ncols() != n {
            return Err(Error::dim("output matrix columns", n, c[j].ncols()));
        }
        if r[j].shape() != (c[j].nrows(), c[j].nrows()) {
            return Err(Error::dim("measurement covariance", c[j].nrows(), r[j].nrows()));
        }
        let r_inv = spd_inverse(&r[j], "measurement covariance R")?;
        let cphi = &c[j] * &phi;
        gramian += cphi.transpose() * r_inv * &cphi;
        if j + 1 < horizon {
            if a[j].shape() != (n, n) {
                return Err(Error::dim("transition matrix", n, a[j].nrows()));
            }
            phi = &a[j] * phi;
        }
    }
    let gramian = symmetrize(&gramian);
    let (alpha_hat, _) = eigen_extremes(&gramian);
    Ok(ObservabilityReport {
        gramian,
        alpha_hat,
        window_start,
    })
}

/// Gramian of the window starting at `window_start` with SCDC matrices
/// evaluated along `states` (`ℓ` entries) and `inputs` (`ℓ−1` entries).
pub fn window_gramian<M: SystemModel + ?Sized>(
    model: &M,
    noise: &NoiseSpec,
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    window_start: usize,
) -> Result<ObservabilityReport> {
    if inputs.len() + 1 != states.len() {
        return Err(Error::dim("window inputs", states.len().saturating_sub(1), inputs.len()));
    }
    let a = states[..states.len() - 1]
        .iter()
        .zip(inputs)
        .enumerate()
        .map(|(j, (x, u))| model.scdc(x, u, window_start + j).map(|(a, _)| a))
        .collect::<Result<Vec<_>>>()?;
    let c = states
        .iter()
        .enumerate()
        .map(|(j, x)| model.output_matrix(x, window_start + j))
        .collect::<Result<Vec<_>>>()?;
    let r: Vec<_> = (0..states.len())
        .map(|j| noise.r(window_start + j).clone())
        .collect();
    observability_gramian(&a, &c, &r, window_start)
}

/// One post-horizon step of a trial as seen by the monitor.
#[derive(Clone, Debug)]
pub struct TraceStep {
    pub k: usize,
    pub truth: DVector<f64>,
    pub estimate: DVector<f64>,
    /// `u_k`, used to evaluate the SCDC factors along the estimate.
    pub input: DVector<f64>,
    /// Arrival covariance produced at this step.
    pub arrival_cov: Option<DMatrix<f64>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bands {
    pub min_eig: f64,
    pub max_eig: f64,
    /// Error may not exceed this multiple of its second-half median.
    pub divergence_ratio: f64,
}

impl Default for Bands {
    fn default() -> Self {
        Self {
            min_eig: 1e-8,
            max_eig: 1e6,
            divergence_ratio: 10.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BoundsLog {
    pub steps: Vec<usize>,
    pub p_min_eig: Vec<f64>,
    pub p_max_eig: Vec<f64>,
    pub a_norm: Vec<f64>,
    pub c_norm: Vec<f64>,
    pub error_norm: Vec<f64>,
    /// Human-readable band violations; empty when every check passed.
    pub violations: Vec<String>,
}

impl BoundsLog {
    pub fn sup_error(&self) -> f64 {
        self.error_norm.iter().copied().fold(0.0, f64::max)
    }

    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        0.5 * (values[m - 1] + values[m])
    }
}

/// Extracts covariance eigenvalues, SCDC norms and error norms from a trace
/// and flags band violations. `run_length` is `N`; the second half is
/// `k ≥ N/2`.
pub fn bounds_monitor<M: SystemModel + ?Sized>(
    model: &M,
    trace: &[TraceStep],
    run_length: usize,
    bands: &Bands,
) -> BoundsLog {
    let mut log = BoundsLog::default();
    for step in trace {
        log.steps.push(step.k);
        if let Some(p) = &step.arrival_cov {
            let (lo, hi) = eigen_extremes(p);
            if !(lo >= bands.min_eig && hi <= bands.max_eig) {
                log.violations.push(format!(
                    "step {}: arrival covariance eigenvalues [{lo:e}, {hi:e}] outside [{:e}, {:e}]",
                    step.k, bands.min_eig, bands.max_eig
                ));
            }
            log.p_min_eig.push(lo);
            log.p_max_eig.push(hi);
        }
        match model.scdc(&step.estimate, &step.input, step.k) {
            Ok((a, _)) => log.a_norm.push(spectral_norm(&a)),
            Err(e) => log.violations.push(format!("step {}: SCDC factors unavailable: {e}", step.k)),
        }
        match model.output_matrix(&step.estimate, step.k) {
            Ok(c) => log.c_norm.push(spectral_norm(&c)),
            Err(e) => log.violations.push(format!("step {}: output matrix unavailable: {e}", step.k)),
        }
        let err = (&step.truth - &step.estimate).norm();
        if !err.is_finite() {
            log.violations.push(format!("step {}: non-finite estimation error", step.k));
        }
        log.error_norm.push(err);
    }

    let mut second_half: Vec<f64> = trace
        .iter()
        .zip(&log.error_norm)
        .filter(|(s, _)| 2 * s.k >= run_length)
        .map(|(_, &e)| e)
        .collect();
    if !second_half.is_empty() {
        let limit = bands.divergence_ratio * median(&mut second_half);
        for (s, &e) in trace.iter().zip(&log.error_norm) {
            if e > limit {
                log.violations.push(format!(
                    "step {}: error {e:e} exceeds {} x second-half median ({limit:e})",
                    s.k, bands.divergence_ratio
                ));
            }
        }
    }
    log
}
