//! Error types shared across the crate.

use thiserror::Error;

/// Errors produced by design construction, evaluation and search.
#[derive(Debug, Error)]
pub enum Error {
    /// A Cholesky pivot fell below the positive-definiteness threshold.
    #[error("matrix is not positive definite (pivot {pivot:.3e} at step {step})")]
    NotPositiveDefinite { step: usize, pivot: f64 },

    /// General matrix inversion failed.
    #[error("matrix is singular")]
    Singular,

    /// A distribution function was queried outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// The design has fewer residual degrees of freedom than the model needs.
    #[error("design cannot support the primary model (residual degrees of freedom would be {residual})")]
    ModelTooLarge { residual: i64 },

    /// The primary information matrix is singular for this design.
    #[error("singular information matrix: the design cannot estimate the primary model")]
    SingularInformation,

    /// No feasible starting design was found within the retry limit.
    #[error("search initialization failed after {attempts} attempts: {reason}")]
    InitializationFailed { attempts: usize, reason: String },

    /// A configuration field failed validation. `path` locates the field.
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    /// A design file could not be parsed.
    #[error("design format error: {0}")]
    DesignFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
