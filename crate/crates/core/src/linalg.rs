//! Small dense helpers shared by the estimators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::{Error, Result};

/// `(M + Mᵀ) / 2`
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Inverse of a symmetric positive-definite matrix through its Cholesky factor.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite {
            what: format!("{what} (non-finite entries)"),
        });
    }
    let chol = m.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite {
        what: what.to_string(),
    })?;
    Ok(symmetrize(&chol.inverse()))
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.is_square() && m.iter().all(|v| v.is_finite()) && m.clone().cholesky().is_some()
}

/// Smallest and largest eigenvalue of a symmetric matrix.
pub fn eigen_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// Induced 2-norm.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}

/// Symmetrizes a covariance, nudges a marginally semidefinite one by `1e-10·I`,
/// and verifies it factors.
pub fn repair_covariance(p: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    const NUDGE: f64 = 1e-10;
    let mut sym = symmetrize(p);
    let (min, _) = eigen_extremes(&sym);
    if min > -NUDGE && min <= NUDGE {
        for i in 0..sym.nrows() {
            sym[(i, i)] += NUDGE;
        }
    }
    if !is_positive_definite(&sym) {
        return Err(Error::NotPositiveDefinite {
            what: format!("{what} (smallest eigenvalue {min:e})"),
        });
    }
    Ok(sym)
}

/// A square root `S` with `S Sᵀ = M` for a symmetric positive-semidefinite `M`.
///
/// Uses Cholesky when it succeeds, otherwise an eigen-decomposition with
/// negative eigenvalues clipped to zero.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(chol) = m.clone().cholesky() {
        return chol.l();
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let roots = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()),
    );
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

pub(crate) fn ensure_finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain { what })
    }
}
