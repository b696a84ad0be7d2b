//! Symmetric-matrix functions shared by the feature-space estimators.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Eigenvalues below this fraction of the largest are treated as zero by
/// [`pinv_sqrt_psd`].
pub const PINV_RELATIVE_CUTOFF: f64 = 1e-10;

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// `M^{-1/2}` for a matrix known to satisfy `M >= ridge * I`.
///
/// Fails if an eigenvalue falls below `ridge - 1e-8`; eigenvalues are
/// floored at `ridge / 2` before inversion.
pub fn inverse_sqrt_spd(m: &DMatrix<f64>, ridge: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Numeric("inverse square root of a non-square matrix".into()));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let min = eig.eigenvalues.min();
    if !(min >= ridge - 1e-8) {
        return Err(Error::Numeric(format!(
            "matrix expected to dominate {ridge} I has eigenvalue {min}"
        )));
    }
    let scale = eig.eigenvalues.map(|l| 1.0 / l.max(ridge / 2.0).sqrt());
    let u = &eig.eigenvectors;
    Ok(symmetrize(&(u * DMatrix::from_diagonal(&scale) * u.transpose())))
}

/// Pseudo-inverse of the PSD square root, `(M^{1/2})^+`.
pub fn pinv_sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return DMatrix::zeros(0, 0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let max = eig.eigenvalues.max();
    let cutoff = PINV_RELATIVE_CUTOFF * max.max(0.0);
    let scale = eig
        .eigenvalues
        .map(|l| if l > cutoff && l > 0.0 { 1.0 / l.sqrt() } else { 0.0 });
    let u = &eig.eigenvectors;
    symmetrize(&(u * DMatrix::from_diagonal(&scale) * u.transpose()))
}
