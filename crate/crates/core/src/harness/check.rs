//! Invariant suite on the linear-Gaussian oracle.

use nalgebra::{DMatrix, DVector};

use super::config::{BenchmarkConfig, EstimatorKind, ModelChoice};
use super::trial::{run_trial, Truth};
use crate::linalg::spd_inverse;
use crate::scdmhe::riccati_update;
use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Textbook Kalman filter in covariance form; the first step is a pure
/// measurement update of the prior.
#[allow(clippy::too_many_arguments)]
pub fn kalman_reference(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x0: &DVector<f64>,
    p0: &DMatrix<f64>,
    truth: &Truth,
) -> Result<Vec<DVector<f64>>> {
    let n = x0.len();
    let mut x = x0.clone();
    let mut p = p0.clone();
    let mut out = Vec::with_capacity(truth.measurements.len());
    for (k, y) in truth.measurements.iter().enumerate() {
        if k > 0 {
            x = a * &x + b * &truth.inputs[k - 1];
            p = a * &p * a.transpose() + q;
        }
        let s = c * &p * c.transpose() + r;
        let gain = &p * c.transpose() * spd_inverse(&s, "innovation covariance")?;
        x = &x + &gain * (y - c * &x);
        p = (DMatrix::identity(n, n) - &gain * c) * &p;
        out.push(x.clone());
    }
    Ok(out)
}

/// Runs the linear oracle for `cfg.trials` seeds and checks every estimator
/// against [`kalman_reference`] at `tolerance`, plus iteration counts, KKT
/// residuals and the Riccati hand case.
pub fn linear_oracle_checks(cfg: &BenchmarkConfig, tolerance: f64) -> Result<Vec<CheckOutcome>> {
    let mut cfg = cfg.clone();
    cfg.model = ModelChoice::Linear;
    cfg.timing = false;
    cfg.validate()?;
    let model = crate::model::LinearModel::quadrotor_linearization(cfg.quadrotor.ts);
    let horizon = cfg.mhe.horizon;

    let mut worst = vec![0.0f64; cfg.estimators.len()];
    let mut max_iters = 0usize;
    let mut max_residual = 0.0f64;
    let mut failures = Vec::new();
    for trial in 0..cfg.trials {
        let res = run_trial(&cfg, trial)?;
        if res.failed() {
            failures.push(format!("trial {trial}: {}", res.failure_summary()));
            continue;
        }
        let kf = kalman_reference(
            model.a(),
            model.b(),
            model.c(),
            &cfg.q,
            &cfg.r,
            &cfg.x0_hat,
            &cfg.p0,
            &res.truth,
        )?;
        for (slot, run) in worst.iter_mut().zip(&res.runs) {
            for k in horizon..kf.len() {
                *slot = slot.max((&run.estimates[k] - &kf[k]).norm());
            }
            if let Some(r) = run.max_qp_residual {
                max_residual = max_residual.max(r);
            }
            if run.kind == EstimatorKind::Scdmhe {
                max_iters = max_iters.max(run.iterations.iter().copied().max().unwrap_or(0));
            }
        }
    }

    let mut out = vec![CheckOutcome {
        name: "all trials completed".into(),
        passed: failures.is_empty(),
        detail: if failures.is_empty() {
            format!("{} trials", cfg.trials)
        } else {
            failures.join("; ")
        },
    }];
    for (kind, w) in cfg.estimators.iter().zip(&worst) {
        out.push(CheckOutcome {
            name: format!("{kind} matches Kalman filter"),
            passed: *w <= tolerance,
            detail: format!("max post-horizon deviation {w:.3e} (tolerance {tolerance:.0e})"),
        });
    }
    if cfg.estimators.contains(&EstimatorKind::Scdmhe) {
        out.push(CheckOutcome {
            name: "scdmhe converges within two QPs".into(),
            passed: max_iters <= 2,
            detail: format!("max i* = {max_iters}"),
        });
    }
    out.push(CheckOutcome {
        name: "KKT residuals".into(),
        passed: max_residual <= cfg.mhe.kkt.tolerance,
        detail: format!("max residual {max_residual:.3e}"),
    });

    let (q1, q2) = (1e-3, 5e-2);
    let p = riccati_update(
        &DMatrix::identity(2, 2),
        &DMatrix::identity(2, 2),
        &DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        &DMatrix::from_diagonal(&DVector::from_vec(vec![q1, q2])),
        &DMatrix::from_element(1, 1, 0.5),
    )?;
    let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / 3.0 + q1, 1.0 + q2]));
    let dev = (p - expected).amax();
    out.push(CheckOutcome {
        name: "Riccati hand case".into(),
        passed: dev <= 1e-12,
        detail: format!("deviation {dev:.3e}"),
    });
    Ok(out)
}
