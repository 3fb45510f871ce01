//! Comparison estimators: EKF, UKF and a Jacobian-linearized nonlinear MHE.

mod ekf;
mod nmhe;
mod ukf;

use nalgebra::{DMatrix, DVector};

use crate::linalg::{is_positive_definite, symmetrize};
use crate::{Error, Result};

pub use ekf::{ekf_predict, ekf_update, Ekf};
pub use nmhe::{NonlinearMhe, SqpIteration, SqpOptions};
pub use ukf::{Ukf, UkfParams};

/// Mean and covariance of a Gaussian state belief.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::dim("belief covariance", mean.len(), cov.nrows()));
        }
        if !is_positive_definite(&symmetrize(&cov)) {
            return Err(Error::NotPositiveDefinite {
                what: "belief covariance".into(),
            });
        }
        Ok(Self { mean, cov })
    }
}
