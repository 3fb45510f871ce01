//! Horizon-structured equality-constrained quadratic programs.
//!
//! The decision vector over a window of `ℓ` stages is
//! `ζ = [χ_0 … χ_{ℓ-1}, ω_0 … ω_{ℓ-2}, ν_0 … ν_{ℓ-1}]` (stage 0 is the oldest).
//! The canonical objective is `½ ζᵀHζ + fᵀζ` with
//!
//! ```text
//! H = 2·diag(P⁻¹, 0, …, 0, Q_0⁻¹ … Q_{ℓ-2}⁻¹, R_0⁻¹ … R_{ℓ-1}⁻¹)
//! f = [−2P⁻¹x̄; 0]
//! ```
//!
//! which equals the window cost up to the constant `‖x̄‖²_{P⁻¹}`. Constraint rows
//! are stacked dynamics first, then measurements, each in stage order:
//!
//! ```text
//! χ_{j+1} − A_j χ_j − ω_j = d_j        (d_j = B_j u_j for SCDC windows)
//! C_j χ_j + ν_j            = y_j
//! ```

mod kkt;

pub use kkt::{kkt_residual, solve_kkt, KktOptions, KktSolver, QpSolution};

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::linalg::spd_inverse;
use crate::{Error, Result};

/// Index bookkeeping for a window of `horizon` stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QpLayout {
    pub n: usize,
    pub p: usize,
    pub horizon: usize,
}

impl QpLayout {
    pub fn new(n: usize, p: usize, horizon: usize) -> Result<Self> {
        if horizon < 2 {
            return Err(Error::InvalidArgument(format!(
                "horizon must be at least 2, got {horizon}"
            )));
        }
        if n == 0 || p == 0 {
            return Err(Error::InvalidArgument("state and output dimensions must be positive".into()));
        }
        Ok(Self { n, p, horizon })
    }

    /// `nℓ + n(ℓ−1) + pℓ`
    pub fn n_z(&self) -> usize {
        self.n * self.horizon + self.n * (self.horizon - 1) + self.p * self.horizon
    }

    /// `n(ℓ−1) + pℓ`
    pub fn n_c(&self) -> usize {
        self.n * (self.horizon - 1) + self.p * self.horizon
    }

    pub fn state(&self, j: usize) -> usize {
        j * self.n
    }

    pub fn process_noise(&self, j: usize) -> usize {
        self.n * self.horizon + j * self.n
    }

    pub fn meas_noise(&self, j: usize) -> usize {
        self.n * self.horizon + self.n * (self.horizon - 1) + j * self.p
    }

    pub fn dynamics_row(&self, j: usize) -> usize {
        j * self.n
    }

    pub fn measurement_row(&self, j: usize) -> usize {
        self.n * (self.horizon - 1) + j * self.p
    }
}

/// `min ½ zᵀHz + fᵀz  s.t.  A z = b`.
#[derive(Clone, Debug)]
pub struct EqualityQp {
    pub hessian: CsrMatrix<f64>,
    pub linear: DVector<f64>,
    pub constraints: CsrMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Present for horizon-structured problems; selects the banded ordering.
    pub layout: Option<QpLayout>,
}

impl EqualityQp {
    /// A general (unstructured) problem, mainly for tests and small instances.
    pub fn new(
        hessian: &DMatrix<f64>,
        linear: DVector<f64>,
        constraints: &DMatrix<f64>,
        rhs: DVector<f64>,
    ) -> Result<Self> {
        let nz = hessian.nrows();
        if hessian.ncols() != nz {
            return Err(Error::dim("Hessian columns", nz, hessian.ncols()));
        }
        if linear.len() != nz {
            return Err(Error::dim("linear term", nz, linear.len()));
        }
        if constraints.ncols() != nz {
            return Err(Error::dim("constraint columns", nz, constraints.ncols()));
        }
        if rhs.len() != constraints.nrows() {
            return Err(Error::dim("constraint right-hand side", constraints.nrows(), rhs.len()));
        }
        Ok(Self {
            hessian: dense_to_csr(hessian),
            linear,
            constraints: dense_to_csr(constraints),
            rhs,
            layout: None,
        })
    }

    pub fn n_z(&self) -> usize {
        self.linear.len()
    }

    pub fn n_c(&self) -> usize {
        self.rhs.len()
    }

    /// `½ zᵀHz + fᵀz`
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        let hz = &self.hessian * z;
        0.5 * z.dot(&hz) + self.linear.dot(z)
    }

    /// Writes `H`, `f`, `A`, `b` as `row col value` triplets (0-based, 17
    /// significant digits), each section introduced by `# <name> <rows> <cols>`.
    pub fn dump_triplets(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        write_csr_section(&mut out, "H", &self.hessian);
        write_vector_section(&mut out, "f", &self.linear);
        write_csr_section(&mut out, "A", &self.constraints);
        write_vector_section(&mut out, "b", &self.rhs);
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

fn write_csr_section(out: &mut String, name: &str, m: &CsrMatrix<f64>) {
    let _ = writeln!(out, "# {name} {} {}", m.nrows(), m.ncols());
    for (i, j, v) in m.triplet_iter() {
        let _ = writeln!(out, "{i} {j} {v:.16e}");
    }
}

fn write_vector_section(out: &mut String, name: &str, v: &DVector<f64>) {
    let _ = writeln!(out, "# {name} {} 1", v.len());
    for (i, x) in v.iter().enumerate() {
        if *x != 0.0 {
            let _ = writeln!(out, "{i} 0 {x:.16e}");
        }
    }
}

fn dense_to_csr(m: &DMatrix<f64>) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if m[(i, j)] != 0.0 {
                coo.push(i, j, m[(i, j)]);
            }
        }
    }
    CsrMatrix::from(&coo)
}

fn push_block(coo: &mut CooMatrix<f64>, row: usize, col: usize, block: &DMatrix<f64>, scale: f64) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            let v = scale * block[(i, j)];
            if v != 0.0 {
                coo.push(row + i, col + j, v);
            }
        }
    }
}

fn push_identity(coo: &mut CooMatrix<f64>, row: usize, col: usize, size: usize, scale: f64) {
    for i in 0..size {
        coo.push(row + i, col + i, scale);
    }
}

/// Window data for [`assemble_qp`]. Stage 0 is the oldest sample.
#[derive(Clone, Debug)]
pub struct HorizonProblem {
    /// Arrival anchor `x̄`.
    pub x_bar: DVector<f64>,
    /// Arrival covariance `P`.
    pub p: DMatrix<f64>,
    /// `Q_j`, `ℓ−1` entries.
    pub q: Vec<DMatrix<f64>>,
    /// `R_j`, `ℓ` entries.
    pub r: Vec<DMatrix<f64>>,
    /// `A_j`, `ℓ−1` entries.
    pub a: Vec<DMatrix<f64>>,
    /// Dynamics right-hand sides `d_j`, `ℓ−1` entries.
    pub drift: Vec<DVector<f64>>,
    /// `C_j`, `ℓ` entries.
    pub c: Vec<DMatrix<f64>>,
    /// Measurement right-hand sides, `ℓ` entries.
    pub y: Vec<DVector<f64>>,
    /// Added to every inverse-covariance block before assembly.
    pub regularization: f64,
}

impl HorizonProblem {
    pub fn horizon(&self) -> usize {
        self.c.len()
    }

    fn validate(&self) -> Result<QpLayout> {
        let n = self.x_bar.len();
        let horizon = self.c.len();
        let p = self.c.first().map(|c| c.nrows()).unwrap_or(0);
        let layout = QpLayout::new(n, p, horizon)?;
        let stages = horizon - 1;
        for (len, ctx) in [
            (self.a.len(), "dynamics factors A"),
            (self.drift.len(), "dynamics right-hand sides"),
            (self.q.len(), "process covariances Q"),
        ] {
            if len != stages {
                return Err(Error::dim(ctx, stages, len));
            }
        }
        for (len, ctx) in [(self.r.len(), "measurement covariances R"), (self.y.len(), "measurements")] {
            if len != horizon {
                return Err(Error::dim(ctx, horizon, len));
            }
        }
        if self.p.shape() != (n, n) {
            return Err(Error::dim("arrival covariance", n, self.p.nrows()));
        }
        for a in &self.a {
            if a.shape() != (n, n) {
                return Err(Error::dim("dynamics factor A", n, a.nrows().max(a.ncols())));
            }
        }
        for d in &self.drift {
            if d.len() != n {
                return Err(Error::dim("dynamics right-hand side", n, d.len()));
            }
        }
        for q in &self.q {
            if q.shape() != (n, n) {
                return Err(Error::dim("process covariance Q", n, q.nrows()));
            }
        }
        for c in &self.c {
            if c.shape() != (p, n) {
                return Err(Error::dim("output factor C columns", n, c.ncols()));
            }
        }
        for r in &self.r {
            if r.shape() != (p, p) {
                return Err(Error::dim("measurement covariance R", p, r.nrows()));
            }
        }
        for y in &self.y {
            if y.len() != p {
                return Err(Error::dim("measurement", p, y.len()));
            }
        }
        if !(self.regularization >= 0.0 && self.regularization.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "Hessian regularization must be finite and non-negative, got {}",
                self.regularization
            )));
        }
        Ok(layout)
    }
}

/// Builds the canonical QP for a window.
pub fn assemble_qp(problem: &HorizonProblem) -> Result<EqualityQp> {
    let layout = problem.validate()?;
    let QpLayout { n, p, horizon } = layout;
    let (n_z, n_c) = (layout.n_z(), layout.n_c());
    let reg = problem.regularization;
    let regularize = |m: DMatrix<f64>| {
        let mut m = m;
        for i in 0..m.nrows() {
            m[(i, i)] += reg;
        }
        m
    };

    let p_inv = regularize(spd_inverse(&problem.p, "arrival covariance P")?);
    let mut h = CooMatrix::new(n_z, n_z);
    push_block(&mut h, 0, 0, &p_inv, 2.0);
    for (j, q) in problem.q.iter().enumerate() {
        let q_inv = regularize(spd_inverse(q, &format!("process covariance Q at stage {j}"))?);
        let at = layout.process_noise(j);
        push_block(&mut h, at, at, &q_inv, 2.0);
    }
    for (j, r) in problem.r.iter().enumerate() {
        let r_inv = regularize(spd_inverse(r, &format!("measurement covariance R at stage {j}"))?);
        let at = layout.meas_noise(j);
        push_block(&mut h, at, at, &r_inv, 2.0);
    }

    let mut linear = DVector::zeros(n_z);
    linear
        .rows_mut(0, n)
        .copy_from(&(&p_inv * &problem.x_bar * -2.0));

    let mut a_eq = CooMatrix::new(n_c, n_z);
    let mut rhs = DVector::zeros(n_c);
    for j in 0..horizon - 1 {
        let row = layout.dynamics_row(j);
        push_block(&mut a_eq, row, layout.state(j), &problem.a[j], -1.0);
        push_identity(&mut a_eq, row, layout.state(j + 1), n, 1.0);
        push_identity(&mut a_eq, row, layout.process_noise(j), n, -1.0);
        rhs.rows_mut(row, n).copy_from(&problem.drift[j]);
    }
    for j in 0..horizon {
        let row = layout.measurement_row(j);
        push_block(&mut a_eq, row, layout.state(j), &problem.c[j], 1.0);
        push_identity(&mut a_eq, row, layout.meas_noise(j), p, 1.0);
        rhs.rows_mut(row, p).copy_from(&problem.y[j]);
    }

    Ok(EqualityQp {
        hessian: CsrMatrix::from(&h),
        linear,
        constraints: CsrMatrix::from(&a_eq),
        rhs,
        layout: Some(layout),
    })
}
