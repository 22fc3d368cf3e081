use std::fmt;

use thiserror::Error;

/// Which member of the (A, B, C) triple a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatrixName {
    A,
    B,
    C,
    /// The Gram matrix of the phase-space scalar product.
    G,
}

impl fmt::Display for MatrixName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            MatrixName::A => "A",
            MatrixName::B => "B",
            MatrixName::C => "C",
            MatrixName::G => "G",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum GyroError {
    #[error("DimensionMismatch: {what} (expected {expected}, found {found})")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },

    #[error("NotSymmetric({matrix}): relative asymmetry {deviation:e} exceeds {tol:e}")]
    NotSymmetric {
        matrix: MatrixName,
        deviation: f64,
        tol: f64,
    },

    #[error("NotAntisymmetric({matrix}): relative symmetric part {deviation:e} exceeds {tol:e}")]
    NotAntisymmetric {
        matrix: MatrixName,
        deviation: f64,
        tol: f64,
    },

    #[error("NotPositiveDefinite({matrix}): smallest eigenvalue {min_eigenvalue:e} <= threshold {threshold:e}")]
    NotPositiveDefinite {
        matrix: MatrixName,
        min_eigenvalue: f64,
        threshold: f64,
    },

    #[error("NonFiniteInput({matrix}): matrix contains NaN or infinite entries")]
    NonFiniteInput { matrix: MatrixName },

    #[error("EvaluationFailure: {0}")]
    EvaluationFailure(String),

    #[error("NotEquilibrium: gradient norm {gradient_norm:e} or Hessian definiteness check failed at q*")]
    NotEquilibrium { gradient_norm: f64 },

    #[error("ForceNotGyroscopic: velocity Jacobian of Q deviates from antisymmetry by {deviation:e} (tol {tol:e})")]
    ForceNotGyroscopic { deviation: f64, tol: f64 },

    #[error("SingularA: Cholesky factorization of A failed")]
    SingularA,

    #[error("NotOscillatory: eigenvalue {eigenvalue} has real part beyond {bound:e}")]
    NotOscillatory { eigenvalue: String, bound: f64 },

    #[error("ConvergenceFailure: {0}")]
    ConvergenceFailure(String),

    #[error("KernelDimensionMismatch at lambda={lambda}: expected {expected}, numerical null space has {found}")]
    KernelDimensionMismatch {
        lambda: f64,
        expected: usize,
        found: usize,
    },

    #[error("StructureViolation: residual {residual:e} exceeds {tol:e} ({what})")]
    StructureViolation {
        what: &'static str,
        residual: f64,
        tol: f64,
    },

    #[error("NonFinite: integration state overflowed at t={time}")]
    NonFinite { time: f64 },
}

impl GyroError {
    /// True for errors caused by the caller's input rather than by a numerical breakdown.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            GyroError::DimensionMismatch { .. }
                | GyroError::NotSymmetric { .. }
                | GyroError::NotAntisymmetric { .. }
                | GyroError::NotPositiveDefinite {
                    matrix: MatrixName::A | MatrixName::B | MatrixName::C,
                    ..
                }
                | GyroError::NonFiniteInput { .. }
                | GyroError::EvaluationFailure(_)
                | GyroError::NotEquilibrium { .. }
                | GyroError::ForceNotGyroscopic { .. }
        )
    }
}

pub type Result<T, E = GyroError> = std::result::Result<T, E>;
