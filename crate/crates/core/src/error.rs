//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by detection, formulation, and I/O paths.
#[derive(Debug, Error)]
pub enum Error {
    /// Modulation order below 2.
    #[error("invalid modulation order {0}: must be at least 2")]
    InvalidModulation(usize),

    /// Vector or matrix dimensions do not agree.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A parameter is out of its documented range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// A value is not a constellation symbol.
    #[error("entry {index} is not a constellation symbol (value {value})")]
    NotInConstellation { index: usize, value: String },

    /// Non-finite values encountered in numeric data.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Exhaustive enumeration would exceed the configured cap.
    #[error("enumeration size {required} exceeds cap {cap}; use the penalty solver instead")]
    CapacityExceeded { required: f64, cap: u64 },

    /// A point violates a feasibility precondition.
    #[error("infeasible point: {0}")]
    Infeasible(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed instance or configuration file.
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
