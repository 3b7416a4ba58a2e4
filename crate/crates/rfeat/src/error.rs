//! Error type shared by the whole crate.
//!
//! The variants mirror the ways user input can be malformed (dimension and
//! domain violations, unsolvable root brackets, non-convergence, file-format
//! damage) so that callers can match on the failure class; the payloads carry
//! enough context to tell *which* quantity failed and by how much.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// All failure modes of the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Two quantities that must share a dimension do not.
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// A quantity that must be strictly positive is not.
    #[error("{what} must be strictly positive, got {value}")]
    NonPositive { what: &'static str, value: f64 },

    /// A quantity that must be finite is NaN or infinite.
    #[error("{what} is not finite")]
    NonFinite { what: &'static str },

    /// A vector that must be nonzero is zero (e.g. `x = μ` when solving for
    /// the optimal perturbation).
    #[error("{what} is the zero vector; the quantity is undefined there")]
    ZeroVector { what: &'static str },

    /// A scalar root could not be bracketed on the required branch.
    #[error("failed to bracket a root for {what}: {detail}")]
    Bracket { what: &'static str, detail: String },

    /// An iterative solver ran out of iterations before reaching tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConverge {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    /// Training produced a non-finite loss.
    #[error("training diverged (non-finite loss) at epoch {epoch}, minibatch {minibatch}")]
    Diverged { epoch: usize, minibatch: usize },

    /// A dataset with zero samples was supplied where data is required.
    #[error("dataset is empty")]
    EmptyDataset,

    /// A label is outside `0..class_count`.
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: u32 },

    /// A generator's separation requirement is violated by its parameters.
    #[error("generator margin violation: {0}")]
    MarginViolation(String),

    /// A configuration value is inconsistent or out of domain.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A serialized file is damaged: wrong magic, truncated payload,
    /// trailing bytes, or an unknown enum tag.
    #[error("format error: {0}")]
    Format(String),

    /// Underlying I/O failure.
    #[error(transparent)]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization failure inside a binary container.
    #[error("manifest JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
