use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative asymmetry accepted by [`psd_check`].
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Outcome of a positive-semidefiniteness test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsdReport {
    pub min_eigenvalue: f64,
    /// Spectral norm of the tested matrix.
    pub norm: f64,
    pub is_psd: bool,
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Largest `|m[i,j] - m[j,i]|`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub(crate) fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let asym = asymmetry(m);
    if asym > SYMMETRY_TOL * max_abs(m).max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Tests whether `m` is PSD: `min_eigenvalue >= -tol * max(1, ||m||_2)`.
pub fn psd_check(m: &DMatrix<f64>, tol: f64) -> Result<PsdReport> {
    check_symmetric(m)?;
    let ev = sym_eigenvalues(m);
    let min_eigenvalue = ev.first().copied().unwrap_or(0.0);
    let norm = ev.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(PsdReport {
        min_eigenvalue,
        norm,
        is_psd: min_eigenvalue >= -tol * norm.max(1.0),
    })
}
