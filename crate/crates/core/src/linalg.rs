//! Small dense helpers shared by the modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;

use crate::error::{GyroError, MatrixName, Result};

pub(crate) fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone()
        .singular_values()
        .iter()
        .fold(0.0_f64, |acc, &s| acc.max(s))
}

pub(crate) fn cholesky(m: &DMatrix<f64>, name: MatrixName) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(m.clone()).ok_or(GyroError::NotPositiveDefinite {
        matrix: name,
        min_eigenvalue: f64::NAN,
        threshold: 0.0,
    })
}

pub(crate) fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

/// Index of the component used to fix the phase of a complex vector: the first
/// component whose modulus is within a relative 1e-8 of the largest modulus.
/// The slack keeps the choice stable when two components tie up to roundoff.
pub(crate) fn gauge_index(z: &DVector<Complex64>) -> usize {
    let max = z.iter().fold(0.0_f64, |acc, c| acc.max(c.norm()));
    z.iter()
        .position(|c| c.norm() >= (1.0 - 1e-8) * max)
        .unwrap_or(0)
}

pub(crate) fn check_len(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(GyroError::DimensionMismatch {
            what: what.to_string(),
            expected,
            found,
        });
    }
    Ok(())
}
