use nalgebra::{DMatrix, DVector};

use super::GaussianBelief;
use crate::linalg::{ensure_finite, psd_sqrt, repair_covariance, spd_inverse};
use crate::model::{NoiseSpec, SystemModel};
use crate::{Error, Estimator, Result};

/// Scaled unscented transform parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self {
            alpha: 1e-3,
            beta: 2.0,
            kappa: 0.0,
        }
    }
}

impl UkfParams {
    pub fn validate(&self, n: usize) -> Result<()> {
        let spread = self.alpha * self.alpha * (n as f64 + self.kappa);
        if !(self.alpha > 0.0) || !(spread > 0.0) || !self.beta.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "UKF parameters need alpha > 0 and alpha^2 (n + kappa) > 0, got {self:?}"
            )));
        }
        Ok(())
    }

    fn lambda(&self, n: usize) -> f64 {
        self.alpha * self.alpha * (n as f64 + self.kappa) - n as f64
    }
}

struct Weights {
    cov0: f64,
    rest: f64,
    scale: f64,
}

impl Weights {
    fn new(params: &UkfParams, n: usize) -> Self {
        let lambda = params.lambda(n);
        let scale = n as f64 + lambda;
        let mean0 = lambda / scale;
        Self {
            cov0: mean0 + 1.0 - params.alpha * params.alpha + params.beta,
            rest: 0.5 / scale,
            scale,
        }
    }
}

fn sigma_points(belief: &GaussianBelief, w: &Weights) -> Vec<DVector<f64>> {
    let root = psd_sqrt(&(&belief.cov * w.scale));
    let mut pts = Vec::with_capacity(2 * belief.mean.len() + 1);
    pts.push(belief.mean.clone());
    for col in root.column_iter() {
        pts.push(&belief.mean + col);
    }
    for col in root.column_iter() {
        pts.push(&belief.mean - col);
    }
    pts
}

/// Weighted mean, formed relative to the central point to limit cancellation.
fn weighted_mean(pts: &[DVector<f64>], w: &Weights) -> DVector<f64> {
    let center = &pts[0];
    let mut acc = DVector::zeros(center.len());
    for p in &pts[1..] {
        acc += p - center;
    }
    center + acc * w.rest
}

fn weighted_cross(
    a: &[DVector<f64>],
    a_mean: &DVector<f64>,
    b: &[DVector<f64>],
    b_mean: &DVector<f64>,
    w: &Weights,
) -> DMatrix<f64> {
    let mut acc = DMatrix::zeros(a_mean.len(), b_mean.len());
    for (i, (ai, bi)) in a.iter().zip(b).enumerate() {
        let weight = if i == 0 { w.cov0 } else { w.rest };
        acc += (ai - a_mean) * (bi - b_mean).transpose() * weight;
    }
    acc
}

/// Unscented Kalman filter with `2n + 1` sigma points redrawn before each
/// measurement update.
#[derive(Clone, Debug)]
pub struct Ukf<M> {
    model: M,
    noise: NoiseSpec,
    params: UkfParams,
    belief: GaussianBelief,
    next_k: usize,
}

impl<M: SystemModel> Ukf<M> {
    pub fn new(model: M, noise: NoiseSpec, prior: GaussianBelief, params: UkfParams) -> Result<Self> {
        params.validate(model.state_dim())?;
        Ok(Self {
            model,
            noise,
            params,
            belief: prior,
            next_k: 0,
        })
    }

    pub fn belief(&self) -> &GaussianBelief {
        &self.belief
    }

    fn predict(&self, u: &DVector<f64>, k: usize) -> Result<GaussianBelief> {
        let w = Weights::new(&self.params, self.model.state_dim());
        let pts = sigma_points(&self.belief, &w);
        let prop = pts
            .iter()
            .map(|x| self.model.dynamics(x, u, k))
            .collect::<Result<Vec<_>>>()?;
        let mean = weighted_mean(&prop, &w);
        ensure_finite(&mean, "UKF predicted mean")?;
        let cov = weighted_cross(&prop, &mean, &prop, &mean, &w) + self.noise.q(k);
        let cov = repair_covariance(&cov, "UKF predicted covariance")
            .map_err(|e| Error::Filter(format!("step {k}: {e}")))?;
        Ok(GaussianBelief { mean, cov })
    }

    fn update(&self, prior: &GaussianBelief, y: &DVector<f64>, k: usize) -> Result<GaussianBelief> {
        let w = Weights::new(&self.params, self.model.state_dim());
        let pts = sigma_points(prior, &w);
        let obs = pts
            .iter()
            .map(|x| self.model.measurement(x, k))
            .collect::<Result<Vec<_>>>()?;
        let y_hat = weighted_mean(&obs, &w);
        let s = weighted_cross(&obs, &y_hat, &obs, &y_hat, &w) + self.noise.r(k);
        let pxy = weighted_cross(&pts, &prior.mean, &obs, &y_hat, &w);
        let s_inv = spd_inverse(&s, "UKF innovation covariance")
            .map_err(|e| Error::Filter(format!("step {k}: {e}")))?;
        let gain = &pxy * s_inv;
        let mean = &prior.mean + &gain * (y - y_hat);
        ensure_finite(&mean, "UKF posterior mean")?;
        let cov = &prior.cov - &gain * &s * gain.transpose();
        let cov = repair_covariance(&cov, "UKF posterior covariance")
            .map_err(|e| Error::Filter(format!("step {k}: {e}")))?;
        Ok(GaussianBelief { mean, cov })
    }
}

impl<M: SystemModel> Estimator for Ukf<M> {
    fn step(&mut self, k: usize, u_prev: Option<&DVector<f64>>, y: &DVector<f64>) -> Result<DVector<f64>> {
        if k != self.next_k {
            return Err(Error::InvalidArgument(format!("expected step {}, got {k}", self.next_k)));
        }
        let prior = match (k, u_prev) {
            (0, _) => self.belief.clone(),
            (_, Some(u)) => self.predict(u, k - 1)?,
            (_, None) => {
                return Err(Error::InvalidArgument(format!("missing input u_{} at step {k}", k - 1)))
            }
        };
        self.belief = self.update(&prior, y, k)?;
        self.next_k = k + 1;
        Ok(self.belief.mean.clone())
    }
}
