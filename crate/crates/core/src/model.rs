//! System models: nonlinear maps, their exact pseudo-linear factors, and Jacobians.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{ensure_finite, is_positive_definite};
use crate::{Error, Result};

/// A discrete-time system `x⁺ = f(x, u, k)`, `y = h(x, k)` together with its
/// state- and control-dependent coefficient (SCDC) factorization
/// `f = A(x,u,k)·x + B(x,u,k)·u`, `h = C(x,k)·x` and its Jacobians.
///
/// Implementations must keep the factorization exact; the estimators rely on
/// it rather than on a first-order expansion.
pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DVector<f64>>;
    fn measurement(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>>;

    /// `(A, B)` with `A` n×n and `B` n×m.
    fn scdc(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// `C` with shape p×n.
    fn output_matrix(&self, x: &DVector<f64>, k: usize) -> Result<DMatrix<f64>>;

    /// `(∂f/∂x, ∂h/∂x)`.
    fn jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)>;

    /// Column labels for exported state components.
    fn state_labels(&self) -> Vec<String> {
        (0..self.state_dim()).map(|i| format!("x{i}")).collect()
    }
}

/// Physical constants of the vertical quadrotor benchmark.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadrotorParams {
    /// Sampling period, s.
    pub ts: f64,
    /// Mass, kg.
    pub mass: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
    /// Drag coefficient.
    pub drag: f64,
    /// Rangefinder saturation, m.
    pub h_max: f64,
}

impl Default for QuadrotorParams {
    fn default() -> Self {
        Self {
            ts: 0.05,
            mass: 1.5,
            g: 9.81,
            drag: 0.25,
            h_max: 30.0,
        }
    }
}

impl QuadrotorParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("ts", self.ts),
            ("mass", self.mass),
            ("g", self.g),
            ("drag", self.drag),
            ("h_max", self.h_max),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "quadrotor parameter {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Below this `|u|` the input factor `T_s(1 − g/u)` is rejected.
pub const INPUT_GUARD: f64 = 1e-6;
/// Below this `|z/h_max|` the output factor switches to its Taylor series.
pub const OUTPUT_SERIES_THRESHOLD: f64 = 1e-4;

/// Vertical quadrotor kinematics with quadratic drag and a saturating
/// rangefinder: state `[z, ż]`, thrust acceleration input `u`, output
/// `h_max·tanh(z/h_max)`.
#[derive(Clone, Debug, Default)]
pub struct Quadrotor {
    params: QuadrotorParams,
}

impl Quadrotor {
    pub fn new(params: QuadrotorParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn params(&self) -> &QuadrotorParams {
        &self.params
    }

    fn drag_ratio(&self) -> f64 {
        self.params.drag / self.params.mass
    }

    /// `(h_max/z)·tanh(z/h_max)`, continuous through `z = 0`.
    pub fn output_gain(&self, z: f64) -> f64 {
        let s = z / self.params.h_max;
        if s.abs() < OUTPUT_SERIES_THRESHOLD {
            1.0 - s * s / 3.0
        } else {
            s.tanh() / s
        }
    }
}

fn check_len(v: &DVector<f64>, n: usize, context: &'static str) -> Result<()> {
    if v.len() != n {
        return Err(Error::dim(context, n, v.len()));
    }
    Ok(())
}

impl SystemModel for Quadrotor {
    fn state_dim(&self) -> usize {
        2
    }
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        check_len(x, 2, "quadrotor state")?;
        check_len(u, 1, "quadrotor input")?;
        ensure_finite(x, "quadrotor state")?;
        ensure_finite(u, "quadrotor input")?;
        let QuadrotorParams { ts, g, .. } = self.params;
        let (z, zd) = (x[0], x[1]);
        Ok(DVector::from_vec(vec![
            z + ts * zd,
            zd + ts * (u[0] - g - self.drag_ratio() * zd * zd.abs()),
        ]))
    }

    fn measurement(&self, x: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        check_len(x, 2, "quadrotor state")?;
        ensure_finite(x, "quadrotor state")?;
        let h_max = self.params.h_max;
        Ok(DVector::from_element(1, h_max * (x[0] / h_max).tanh()))
    }

    fn scdc(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len(x, 2, "quadrotor state")?;
        check_len(u, 1, "quadrotor input")?;
        ensure_finite(x, "quadrotor state")?;
        ensure_finite(u, "quadrotor input")?;
        let QuadrotorParams { ts, g, .. } = self.params;
        if u[0].abs() < INPUT_GUARD {
            return Err(Error::SingularFactor {
                what: "quadrotor input factor B(u) = T_s(1 - g/u) needs |u| >= 1e-6",
                value: u[0],
            });
        }
        let a = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, ts, 0.0, 1.0 - ts * self.drag_ratio() * x[1].abs()],
        );
        let b = DMatrix::from_row_slice(2, 1, &[0.0, ts * (1.0 - g / u[0])]);
        Ok((a, b))
    }

    fn output_matrix(&self, x: &DVector<f64>, _k: usize) -> Result<DMatrix<f64>> {
        check_len(x, 2, "quadrotor state")?;
        ensure_finite(x, "quadrotor state")?;
        Ok(DMatrix::from_row_slice(1, 2, &[self.output_gain(x[0]), 0.0]))
    }

    fn jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len(x, 2, "quadrotor state")?;
        check_len(u, 1, "quadrotor input")?;
        ensure_finite(x, "quadrotor state")?;
        ensure_finite(u, "quadrotor input")?;
        let ts = self.params.ts;
        let fx = DMatrix::from_row_slice(
            2,
            2,
            &[1.0, ts, 0.0, 1.0 - 2.0 * ts * self.drag_ratio() * x[1].abs()],
        );
        let sech = 1.0 / (x[0] / self.params.h_max).cosh();
        let hx = DMatrix::from_row_slice(1, 2, &[sech * sech, 0.0]);
        Ok((fx, hx))
    }

    fn state_labels(&self) -> Vec<String> {
        vec!["z".into(), "zdot".into()]
    }
}

/// Constant-coefficient model `x⁺ = A₀x + B₀u`, `y = C₀x`. Its SCDC factors,
/// Jacobians and true maps coincide, which makes it the Kalman-equivalence oracle.
#[derive(Clone, Debug)]
pub struct LinearModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    labels: Vec<String>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("linear model A columns", n, a.ncols()));
        }
        if b.nrows() != n {
            return Err(Error::dim("linear model B rows", n, b.nrows()));
        }
        if c.ncols() != n {
            return Err(Error::dim("linear model C columns", n, c.ncols()));
        }
        let labels = (0..n).map(|i| format!("x{i}")).collect();
        Ok(Self { a, b, c, labels })
    }

    /// The quadrotor's drag-free factorization: `A₀ = [[1, T_s], [0, 1]]`,
    /// `B₀ = [0; T_s]`, `C₀ = [1, 0]`.
    pub fn quadrotor_linearization(ts: f64) -> Self {
        Self {
            a: DMatrix::from_row_slice(2, 2, &[1.0, ts, 0.0, 1.0]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, ts]),
            c: DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            labels: vec!["z".into(), "zdot".into()],
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

impl Default for LinearModel {
    fn default() -> Self {
        Self::quadrotor_linearization(QuadrotorParams::default().ts)
    }
}

impl SystemModel for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn input_dim(&self) -> usize {
        self.b.ncols()
    }
    fn output_dim(&self) -> usize {
        self.c.nrows()
    }

    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        check_len(x, self.state_dim(), "linear model state")?;
        check_len(u, self.input_dim(), "linear model input")?;
        ensure_finite(x, "linear model state")?;
        ensure_finite(u, "linear model input")?;
        Ok(&self.a * x + &self.b * u)
    }

    fn measurement(&self, x: &DVector<f64>, _k: usize) -> Result<DVector<f64>> {
        check_len(x, self.state_dim(), "linear model state")?;
        ensure_finite(x, "linear model state")?;
        Ok(&self.c * x)
    }

    fn scdc(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len(x, self.state_dim(), "linear model state")?;
        check_len(u, self.input_dim(), "linear model input")?;
        Ok((self.a.clone(), self.b.clone()))
    }

    fn output_matrix(&self, x: &DVector<f64>, _k: usize) -> Result<DMatrix<f64>> {
        check_len(x, self.state_dim(), "linear model state")?;
        Ok(self.c.clone())
    }

    fn jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        _k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_len(x, self.state_dim(), "linear model state")?;
        check_len(u, self.input_dim(), "linear model input")?;
        Ok((self.a.clone(), self.c.clone()))
    }

    fn state_labels(&self) -> Vec<String> {
        self.labels.clone()
    }
}

/// Runtime model selection used by the harness.
#[derive(Clone, Debug)]
pub enum ModelKind {
    Quadrotor(Quadrotor),
    Linear(LinearModel),
}

impl ModelKind {
    fn inner(&self) -> &dyn SystemModel {
        match self {
            ModelKind::Quadrotor(m) => m,
            ModelKind::Linear(m) => m,
        }
    }
}

impl SystemModel for ModelKind {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn input_dim(&self) -> usize {
        self.inner().input_dim()
    }
    fn output_dim(&self) -> usize {
        self.inner().output_dim()
    }
    fn dynamics(&self, x: &DVector<f64>, u: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        self.inner().dynamics(x, u, k)
    }
    fn measurement(&self, x: &DVector<f64>, k: usize) -> Result<DVector<f64>> {
        self.inner().measurement(x, k)
    }
    fn scdc(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.inner().scdc(x, u, k)
    }
    fn output_matrix(&self, x: &DVector<f64>, k: usize) -> Result<DMatrix<f64>> {
        self.inner().output_matrix(x, k)
    }
    fn jacobians(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        k: usize,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        self.inner().jacobians(x, u, k)
    }
    fn state_labels(&self) -> Vec<String> {
        self.inner().state_labels()
    }
}

/// Process and measurement covariances, indexed by step. A schedule shorter
/// than the run holds its last entry.
#[derive(Clone, Debug)]
pub struct NoiseSpec {
    q: Vec<DMatrix<f64>>,
    r: Vec<DMatrix<f64>>,
}

impl NoiseSpec {
    pub fn constant(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        Self::schedule(vec![q], vec![r])
    }

    pub fn schedule(q: Vec<DMatrix<f64>>, r: Vec<DMatrix<f64>>) -> Result<Self> {
        if q.is_empty() || r.is_empty() {
            return Err(Error::InvalidArgument("empty noise schedule".into()));
        }
        for (k, qk) in q.iter().enumerate() {
            if !is_positive_definite(qk) {
                return Err(Error::NotPositiveDefinite {
                    what: format!("process covariance Q at index {k}"),
                });
            }
        }
        for (k, rk) in r.iter().enumerate() {
            if !is_positive_definite(rk) {
                return Err(Error::NotPositiveDefinite {
                    what: format!("measurement covariance R at index {k}"),
                });
            }
        }
        Ok(Self { q, r })
    }

    /// Benchmark covariances `Q = diag(1e-3, 5e-2)`, `R = 0.5`.
    pub fn quadrotor_benchmark() -> Self {
        Self {
            q: vec![DMatrix::from_diagonal(&DVector::from_vec(vec![1e-3, 5e-2]))],
            r: vec![DMatrix::from_element(1, 1, 0.5)],
        }
    }

    pub fn q(&self, k: usize) -> &DMatrix<f64> {
        &self.q[k.min(self.q.len() - 1)]
    }

    pub fn r(&self, k: usize) -> &DMatrix<f64> {
        &self.r[k.min(self.r.len() - 1)]
    }

    pub fn state_dim(&self) -> usize {
        self.q[0].nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.r[0].nrows()
    }
}

/// `u_k = offset + amplitude·sin(θ_k)` where `θ_k = k` (radians) by default, or
/// `k·T_s` when a time scale is set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControlSignal {
    pub offset: f64,
    pub amplitude: f64,
    pub time_scale: Option<f64>,
}

impl Default for ControlSignal {
    fn default() -> Self {
        Self {
            offset: QuadrotorParams::default().g,
            amplitude: 0.5,
            time_scale: None,
        }
    }
}

impl ControlSignal {
    pub fn value(&self, k: usize) -> f64 {
        let arg = match self.time_scale {
            Some(ts) => k as f64 * ts,
            None => k as f64,
        };
        self.offset + self.amplitude * arg.sin()
    }

    pub fn input(&self, k: usize, m: usize) -> DVector<f64> {
        DVector::from_element(m, self.value(k))
    }
}

/// Benchmark input `g + 0.5·sin(k)` with `g = 9.81`.
pub fn control_signal(k: usize) -> f64 {
    ControlSignal::default().value(k)
}
