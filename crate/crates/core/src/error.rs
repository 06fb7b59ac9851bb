//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by geometry construction, estimation, solvers, and the
/// experiment harness.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A numerical routine failed (singular matrix, divergence, NaN/Inf).
    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    /// An internal consistency check failed; indicates a bug.
    #[error("internal error: {0}")]
    InternalError(String),

    /// An experiment configuration is inconsistent or unsatisfiable.
    #[error("config error: {0}")]
    ConfigError(String),

    /// A neighborhood query selected no points.
    #[error("empty neighborhood: {0}")]
    EmptyNeighborhood(String),

    /// File I/O failed.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// A structured text file could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::NumericalFailure(msg.into())
    }
}
