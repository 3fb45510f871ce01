//! Seeded Gaussian noise: ChaCha20 stream plus Box–Muller.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// Golden-ratio increment used to spread trial seeds.
pub const SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

/// `base + trial·0x9E3779B97F4A7C15 (mod 2⁶⁴)`
pub fn trial_seed(base: u64, trial: usize) -> u64 {
    base.wrapping_add((trial as u64).wrapping_mul(SEED_STRIDE))
}

/// Standard normal draws from a ChaCha20 stream. Each Box–Muller pair is
/// consumed in order: cosine branch first, then sine.
#[derive(Clone, Debug)]
pub struct GaussianStream {
    rng: ChaCha20Rng,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha20Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = 1.0 - self.rng.random::<f64>();
        let u2 = self.rng.random::<f64>();
        let radius = (-2.0 * u1.ln()).sqrt();
        let angle = std::f64::consts::TAU * u2;
        self.spare = Some(radius * angle.sin());
        radius * angle.cos()
    }

    /// `S·ξ` with `ξ ~ N(0, I)`; pass a square root `S` of the covariance.
    pub fn correlated(&mut self, sqrt: &DMatrix<f64>) -> DVector<f64> {
        let xi = DVector::from_fn(sqrt.ncols(), |_, _| self.standard_normal());
        sqrt * xi
    }
}
