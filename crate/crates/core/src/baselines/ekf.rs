use nalgebra::{DMatrix, DVector};

use super::GaussianBelief;
use crate::linalg::{ensure_finite, spd_inverse, symmetrize};
use crate::model::{NoiseSpec, SystemModel};
use crate::{Error, Estimator, Result};

/// Time update `x⁻ = f(x, u)`, `P⁻ = F P Fᵀ + Q` with `F = ∂f/∂x` at `x`.
pub fn ekf_predict<M: SystemModel + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    u: &DVector<f64>,
    q: &DMatrix<f64>,
    k: usize,
) -> Result<GaussianBelief> {
    let (fx, _) = model.jacobians(&belief.mean, u, k)?;
    let mean = model.dynamics(&belief.mean, u, k)?;
    ensure_finite(&mean, "EKF predicted mean")?;
    let cov = symmetrize(&(&fx * &belief.cov * fx.transpose() + q));
    Ok(GaussianBelief { mean, cov })
}

/// Measurement update in Joseph form. Returns the posterior and the gain.
pub fn ekf_update<M: SystemModel + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
    k: usize,
) -> Result<(GaussianBelief, DMatrix<f64>)> {
    let x = &belief.mean;
    let p = &belief.cov;
    let (_, hx) = model.jacobians(x, &DVector::zeros(model.input_dim()), k)?;
    let s = &hx * p * hx.transpose() + r;
    let s_inv = spd_inverse(&s, "EKF innovation covariance")
        .map_err(|e| Error::Filter(format!("step {k}: {e}")))?;
    let gain = p * hx.transpose() * s_inv;
    let innovation = y - model.measurement(x, k)?;
    let mean = x + &gain * innovation;
    ensure_finite(&mean, "EKF posterior mean")?;
    let i_kh = DMatrix::identity(x.len(), x.len()) - &gain * &hx;
    let cov = symmetrize(&(&i_kh * p * i_kh.transpose() + &gain * r * gain.transpose()));
    Ok((GaussianBelief { mean, cov }, gain))
}

/// Extended Kalman filter. The first call only applies a measurement update
/// to the prior.
#[derive(Clone, Debug)]
pub struct Ekf<M> {
    model: M,
    noise: NoiseSpec,
    belief: GaussianBelief,
    last_gain: Option<DMatrix<f64>>,
    next_k: usize,
}

impl<M: SystemModel> Ekf<M> {
    pub fn new(model: M, noise: NoiseSpec, prior: GaussianBelief) -> Self {
        Self {
            model,
            noise,
            belief: prior,
            last_gain: None,
            next_k: 0,
        }
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    /// Kalman gain of the latest update.
    pub fn last_gain(&self) -> Option<&DMatrix<f64>> {
        self.last_gain.as_ref()
    }
}

impl<M: SystemModel> Estimator for Ekf<M> {
    fn step(&mut self, k: usize, u_prev: Option<&DVector<f64>>, y: &DVector<f64>) -> Result<DVector<f64>> {
        if k != self.next_k {
            return Err(Error::InvalidArgument(format!("expected step {}, got {k}", self.next_k)));
        }
        let prior = match (k, u_prev) {
            (0, _) => self.belief.clone(),
            (_, Some(u)) => ekf_predict(&self.model, &self.belief, u, self.noise.q(k - 1), k - 1)?,
            (_, None) => {
                return Err(Error::InvalidArgument(format!("missing input u_{} at step {k}", k - 1)))
            }
        };
        let (post, gain) = ekf_update(&self.model, &prior, y, self.noise.r(k), k)?;
        self.belief = post;
        self.last_gain = Some(gain);
        self.next_k = k + 1;
        Ok(self.belief.mean.clone())
    }
}
