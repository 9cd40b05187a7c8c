//! Error type shared by every module of the crate.

use thiserror::Error;

/// Errors produced by construction, factorization and iteration routines.
///
/// Variants carry a human-readable context string naming the offending
/// quantity (dimension, shift, condition number) so that failures deep in an
/// outer iteration remain diagnosable.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Operands have incompatible shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A matrix that must be invertible is singular or numerically singular.
    #[error("singular matrix: {0}")]
    Singular(String),

    /// A system violates the stability requirement of the operation.
    #[error("unstable system: {0}")]
    Unstable(String),

    /// A quantity left the representable or trustworthy range.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// An argument is outside the documented range of the operation.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A guard on problem size was exceeded.
    #[error("size limit exceeded: {0}")]
    SizeLimit(String),
}

pub type Result<T> = std::result::Result<T, Error>;
