//! Normal modes of linear gyroscopic systems `A η̈ + B η̇ + C η = 0` with A, C
//! symmetric positive definite and B antisymmetric.
//!
//! [`spectral`] builds a real basis of partner vectors orthonormal for the
//! scalar product G, [`complexmode`] the equivalent complex modes from the
//! kernels of `C - iλB - λ²A`, and [`trajectory`] the closed-form motion.
//! [`verify`] holds independent oracles and the invariant suite.

pub mod complexmode;
pub mod error;
mod linalg;
pub mod spectral;
pub mod system;
pub mod trajectory;
pub mod verify;

pub use complexmode::{ComplexMode, KernelFamily};
pub use error::{GyroError, MatrixName, Result};
pub use spectral::{EvolutionOperator, GramMatrix, ModePair, Pairing, SpectralClusters};
pub use system::{EquilibriumPoint, FnModel, LagrangianModel, SystemMatrices};
pub use trajectory::{HarmonicParams, ModeShape, StateVector};
pub use verify::{InvariantReport, RandomSystemSpec, ToleranceProfile};

pub use nalgebra;
pub use num_complex;
