//! Block vectors, block norms, residuals, and map sensitivities.
//!
//! The product space `X = X_1 x ... x X_n` is represented blockwise with
//! `f64` coordinates. The norm of a single block is always max-abs; a
//! [`NormSpec`] only chooses how block norms combine into a norm on `X`.
//! All reductions run in a fixed left-to-right block order so equal inputs
//! produce bitwise-equal results.

mod block;
mod delta;
pub mod dense;
mod map;
mod norm;
mod residual;

pub use block::{BlockStructure, BlockVector};
pub use delta::{adjusted_threshold, delta_coeffs, DeltaCoeffs};
pub use dense::DenseMatrix;
pub use map::{CsrBlock, FixedPointMap, LinearMap, SparseBlockMatrix};
pub use norm::{block_max_abs, norm, sub_max_abs, NormSpec};
pub use residual::{mixed_residual, residual};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MathError {
    #[error("block structure mismatch: expected {expected:?}, got {got:?}")]
    StructureMismatch {
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid norm: {0}")]
    InvalidNorm(String),
    #[error("map exposes no linear form; sensitivity coefficients must be supplied externally")]
    UnsupportedMap,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is singular (pivot below {0:e} at elimination step {1})")]
    Singular(f64, usize),
}
