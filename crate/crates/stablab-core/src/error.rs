//! Error type shared across the laboratory.

use thiserror::Error;

/// Errors surfaced by laboratory operations.
///
/// Programmer contract violations (dimension mismatches between a parameter
/// vector and a model) panic instead; everything a caller can plausibly
/// recover from or mis-configure lands here.
#[derive(Debug, Error)]
pub enum Error {
    /// A dataset was empty where at least one point is required.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Configuration values violate a documented constraint.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// The requested attack method does not apply to the given model.
    #[error("unsupported attack method: {0}")]
    UnsupportedMethod(String),

    /// Full-population optimization diverged (risk grew 10x from the start).
    #[error("optimization failure: {0}")]
    OptimizationFailure(String),

    /// Exact enumeration would exceed the configured evaluation cap.
    #[error("enumeration cap exceeded: need {needed} evaluations, cap is {cap}")]
    EnumerationCapExceeded { needed: u128, cap: u128 },

    /// A formula input violates its contract (negative constant, B below an
    /// observed loss, zero exponent).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Degenerate exponent in a bound formula (q = 0); the limit must be
    /// reported separately.
    #[error("degenerate exponent: {0}")]
    DegenerateExponent(String),

    /// Config file or artifact could not be parsed.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying I/O failure while reading or writing artifacts.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure in an artifact.
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
