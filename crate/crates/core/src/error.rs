//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Kinematic propagation requires a strictly positive time step.
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),

    /// The innovation covariance failed its Cholesky factorization or its
    /// condition-number guard; the update cannot be applied.
    #[error("innovation covariance is numerically singular")]
    SingularInnovation,

    /// A vector or matrix had the wrong size for the operation.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// A configuration value violates its documented range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
