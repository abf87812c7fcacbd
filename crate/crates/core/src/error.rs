//! Error taxonomy shared across the crate.
//!
//! Variants are deliberately coarse: callers match on the *kind* of failure
//! (bad bytes vs. bad arguments vs. broken math), not on message text.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed header, wrong magic, unparseable field.
    #[error("format error: {0}")]
    Format(String),

    /// Structurally valid but semantically bad bytes (out-of-range cell,
    /// non-finite value, trailing garbage).
    #[error("corrupt data: {0}")]
    Corruption(String),

    /// File ended before the declared payload did.
    #[error("truncated input: {0}")]
    Truncation(String),

    /// Underlying I/O failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// Caller-supplied value outside the documented domain.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Floating-point breakdown (overflow, non-PSD covariance, ...).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// An internal postcondition failed; indicates a bug or corrupted state.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Input is valid but the requested quantity is undefined for it.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// API misuse: calls out of order, missing state.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Optimization diverged or produced non-finite losses.
    #[error("training error: {0}")]
    Training(String),
}

impl Error {
    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
    pub fn corruption(msg: impl Into<String>) -> Self {
        Error::Corruption(msg.into())
    }
    pub fn truncation(msg: impl Into<String>) -> Self {
        Error::Truncation(msg.into())
    }
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }
    pub fn degenerate(msg: impl Into<String>) -> Self {
        Error::Degenerate(msg.into())
    }
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
    pub fn training(msg: impl Into<String>) -> Self {
        Error::Training(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
