use thiserror::Error;

/// Errors raised by the simulator, optimizer and file-format layers.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A control grid does not span the period it was built for.
    #[error("grid spans {grid} s but the period is {period} s")]
    GridMismatch { grid: f64, period: f64 },

    /// A variance that must be positive was zero, negative or non-finite.
    #[error("numeric degeneracy: {0}")]
    NumericDegeneracy(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}
