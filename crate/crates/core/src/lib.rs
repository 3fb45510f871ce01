//! Iterated state- and control-dependent moving-horizon estimation.
//!
//! The estimator factors nonlinear dynamics `f(x, u) = A(x, u) x + B(x, u) u`
//! and measurements `h(x) = C(x) x` exactly, freezes the coefficient matrices
//! along the previous iterate, and solves the resulting horizon-structured
//! equality-constrained QP until the trajectory stops moving. Extended and
//! unscented Kalman filters plus a Jacobian-based nonlinear MHE are provided
//! as baselines, together with a Monte Carlo harness for the quadrotor
//! rangefinder-saturation benchmark.

pub mod baselines;
pub mod diagnostics;
pub mod eqqp;
mod error;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod scdmhe;

pub use error::{Error, Result};
pub use nalgebra::{DMatrix, DVector};

/// An online state estimator fed one measurement per step.
pub trait Estimator: Send {
    /// Processes `y_k`, given the input `u_{k−1}` applied since the previous
    /// call (`None` at `k = 0`), and returns `x̂_k`. Steps must be consecutive
    /// starting at 0.
    fn step(&mut self, k: usize, u_prev: Option<&DVector<f64>>, y: &DVector<f64>) -> Result<DVector<f64>>;
}
