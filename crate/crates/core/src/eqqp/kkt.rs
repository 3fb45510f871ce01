//! Direct solution of the bordered KKT system
//!
//! ```text
//! [ H  Aᵀ ] [ z ]   [ −f ]
//! [ A  0  ] [ λ ] = [  b ]
//! ```
//!
//! For horizon-structured problems the unknowns are permuted stage by stage
//! (`χ_j, ν_j, μ_j, ω_j, λ_j`) so the matrix is banded with a half-bandwidth
//! that depends only on `(n, p)`. The band is factored by Gaussian elimination
//! with partial pivoting inside the band; work and storage are linear in the
//! horizon.

use nalgebra::DVector;
use nalgebra_sparse::ops::serial::spmm_csr_dense;
use nalgebra_sparse::ops::Op;

use super::{EqualityQp, QpLayout};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KktOptions {
    /// Acceptance bound on `max(‖Hz + f + Aᵀλ‖∞, ‖Az − b‖∞)`.
    pub tolerance: f64,
    /// Maximum iterative-refinement passes.
    pub refinement_passes: usize,
    /// Relative pivot threshold for declaring the KKT matrix singular.
    pub pivot_threshold: f64,
}

impl Default for KktOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-9,
            refinement_passes: 2,
            pivot_threshold: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QpSolution {
    pub z_star: DVector<f64>,
    pub multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub refinement_passes: usize,
}

/// Reusable KKT solver; owns its band workspace.
#[derive(Debug, Default)]
pub struct KktSolver {
    options: KktOptions,
    band: BandLu,
    perm: Vec<usize>,
    perm_layout: Option<(Option<QpLayout>, usize, usize)>,
}

pub fn solve_kkt(qp: &EqualityQp) -> Result<QpSolution> {
    KktSolver::new(KktOptions::default()).solve(qp)
}

impl KktSolver {
    pub fn new(options: KktOptions) -> Self {
        Self {
            options,
            ..Self::default()
        }
    }

    pub fn options(&self) -> &KktOptions {
        &self.options
    }

    pub fn solve(&mut self, qp: &EqualityQp) -> Result<QpSolution> {
        let (n_z, n_c) = (qp.n_z(), qp.n_c());
        let dim = n_z + n_c;
        self.ensure_ordering(qp.layout, n_z, n_c);

        // position of each KKT unknown in the banded ordering
        let mut pos = vec![0usize; dim];
        for (new, &old) in self.perm.iter().enumerate() {
            pos[old] = new;
        }

        let mut entries = Vec::with_capacity(2 * qp.constraints.nnz() + qp.hessian.nnz());
        for (i, j, &v) in qp.hessian.triplet_iter() {
            entries.push((pos[i], pos[j], v));
        }
        for (r, j, &v) in qp.constraints.triplet_iter() {
            entries.push((pos[n_z + r], pos[j], v));
            entries.push((pos[j], pos[n_z + r], v));
        }
        let (mut kl, mut ku) = (0, 0);
        for &(i, j, _) in &entries {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        self.band.reset(dim, kl, ku);
        for &(i, j, v) in &entries {
            self.band.add(i, j, v);
        }
        self.band.factor(self.options.pivot_threshold)?;

        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(0, n_z).copy_from(&(-&qp.linear));
        rhs.rows_mut(n_z, n_c).copy_from(&qp.rhs);

        let mut x = self.solve_permuted(&rhs);
        let mut residual = kkt_residual_vector(qp, &x);
        let mut norm = residual.amax();
        let mut passes = 0;
        while passes < self.options.refinement_passes && norm > 1e-3 * self.options.tolerance {
            let dx = self.solve_permuted(&residual);
            let candidate = &x + dx;
            let cand_residual = kkt_residual_vector(qp, &candidate);
            let cand_norm = cand_residual.amax();
            passes += 1;
            if !(cand_norm < norm) {
                break;
            }
            x = candidate;
            residual = cand_residual;
            norm = cand_norm;
        }
        if !(norm <= self.options.tolerance) {
            return Err(Error::Convergence {
                residual: norm,
                tolerance: self.options.tolerance,
            });
        }
        Ok(QpSolution {
            z_star: x.rows(0, n_z).into_owned(),
            multipliers: x.rows(n_z, n_c).into_owned(),
            kkt_residual: norm,
            refinement_passes: passes,
        })
    }

    fn ensure_ordering(&mut self, layout: Option<QpLayout>, n_z: usize, n_c: usize) {
        let key = (layout, n_z, n_c);
        if self.perm_layout == Some(key) {
            return;
        }
        self.perm = match layout {
            Some(l) if l.n_z() == n_z && l.n_c() == n_c => stage_ordering(&l),
            _ => (0..n_z + n_c).collect(),
        };
        self.perm_layout = Some(key);
    }

    fn solve_permuted(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut b: Vec<f64> = self.perm.iter().map(|&old| rhs[old]).collect();
        self.band.solve_in_place(&mut b);
        let mut x = DVector::zeros(rhs.len());
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = b[new];
        }
        x
    }
}

/// KKT unknown indices in stage order: `χ_j, ν_j, μ_j` then `ω_j, λ_j`.
fn stage_ordering(l: &QpLayout) -> Vec<usize> {
    let n_z = l.n_z();
    let mut order = Vec::with_capacity(n_z + l.n_c());
    for j in 0..l.horizon {
        order.extend(l.state(j)..l.state(j) + l.n);
        order.extend(l.meas_noise(j)..l.meas_noise(j) + l.p);
        let mrow = n_z + l.measurement_row(j);
        order.extend(mrow..mrow + l.p);
        if j + 1 < l.horizon {
            order.extend(l.process_noise(j)..l.process_noise(j) + l.n);
            let drow = n_z + l.dynamics_row(j);
            order.extend(drow..drow + l.n);
        }
    }
    order
}

/// `[−f − Hz − Aᵀλ; b − Az]`
fn kkt_residual_vector(qp: &EqualityQp, x: &DVector<f64>) -> DVector<f64> {
    let (n_z, n_c) = (qp.n_z(), qp.n_c());
    let z = x.rows(0, n_z).into_owned();
    let lambda = x.rows(n_z, n_c).into_owned();
    let mut stat = -&qp.linear - &qp.hessian * &z;
    spmm_csr_dense(1.0, &mut stat, -1.0, Op::Transpose(&qp.constraints), Op::NoOp(&lambda));
    let feas = &qp.rhs - &qp.constraints * &z;
    let mut out = DVector::zeros(n_z + n_c);
    out.rows_mut(0, n_z).copy_from(&stat);
    out.rows_mut(n_z, n_c).copy_from(&feas);
    out
}

/// `max(‖Hz + f + Aᵀλ‖∞, ‖Az − b‖∞)` recomputed from the problem data.
pub fn kkt_residual(qp: &EqualityQp, z: &DVector<f64>, multipliers: &DVector<f64>) -> f64 {
    let mut x = DVector::zeros(qp.n_z() + qp.n_c());
    x.rows_mut(0, qp.n_z()).copy_from(z);
    x.rows_mut(qp.n_z(), qp.n_c()).copy_from(multipliers);
    kkt_residual_vector(qp, &x).amax()
}

/// Banded LU with partial pivoting. Row `r` stores columns
/// `r − kl ..= r + kl + ku`; the extra `kl` upper diagonals absorb fill from
/// row interchanges. Multipliers are kept per elimination step.
#[derive(Debug, Default)]
struct BandLu {
    dim: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    mult: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn reset(&mut self, dim: usize, kl: usize, ku: usize) {
        self.dim = dim;
        self.kl = kl;
        self.ku = ku;
        self.width = 2 * kl + ku + 1;
        self.data.clear();
        self.data.resize(dim * self.width, 0.0);
        self.mult.clear();
        self.mult.resize(dim * kl, 0.0);
        self.piv.clear();
        self.piv.resize(dim, 0);
    }

    #[inline]
    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c + self.kl >= r && c <= r + self.kl + self.ku);
        r * self.width + (c + self.kl - r)
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let i = self.idx(r, c);
        self.data[i] += v;
    }

    fn factor(&mut self, rel_threshold: f64) -> Result<()> {
        let n = self.dim;
        let scale = self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut max_pivot = 0.0f64;
        for k in 0..n {
            let last_row = (k + self.kl).min(n.saturating_sub(1));
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.idx(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            let threshold = rel_threshold * scale.max(max_pivot);
            if !(best > threshold) {
                return Err(Error::RankDeficient {
                    index: k,
                    pivot: best,
                    threshold,
                });
            }
            max_pivot = max_pivot.max(best);
            self.piv[k] = p;
            if p != k {
                for c in k..=last_col {
                    let (a, b) = (self.idx(k, c), self.idx(p, c));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for r in k + 1..=last_row {
                let rk = self.idx(r, k);
                let l = self.data[rk] / pivot;
                self.data[rk] = 0.0;
                self.mult[k * self.kl + (r - k - 1)] = l;
                if l != 0.0 {
                    for c in k + 1..=last_col {
                        let src = self.data[self.idx(k, c)];
                        let dst = self.idx(r, c);
                        self.data[dst] -= l * src;
                    }
                }
            }
        }
        Ok(())
    }

    fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.dim;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let last_row = (k + self.kl).min(n - 1);
            for r in k + 1..=last_row {
                b[r] -= self.mult[k * self.kl + (r - k - 1)] * b[k];
            }
        }
        for k in (0..n).rev() {
            let last_col = (k + self.kl + self.ku).min(n - 1);
            let mut s = b[k];
            for c in k + 1..=last_col {
                s -= self.data[self.idx(k, c)] * b[c];
            }
            b[k] = s / self.data[self.idx(k, k)];
        }
    }
}
