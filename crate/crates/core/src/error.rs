//! Crate-wide error type.
//!
//! Numeric integrity failures (non-finite values, metric violations,
//! divergence) are separated from usage errors (dimension mismatches, bad
//! arguments) and from I/O and format errors so callers can map them to
//! distinct exit codes.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("metric violation: quadratic form {value} below tolerance")]
    MetricViolation { value: f64 },

    #[error("coupling inversion residual {residual} exceeds 1e-5")]
    InversionIntegrity { residual: f64 },

    #[error("training diverged: {context} = {value}")]
    Divergence { context: &'static str, value: f64 },

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn non_finite(context: impl Into<String>) -> Self {
        Error::NonFinite {
            context: context.into(),
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// True for errors that indicate a numerical failure rather than bad
    /// input; the CLI maps these to a dedicated exit code.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::MetricViolation { .. }
                | Error::InversionIntegrity { .. }
                | Error::Divergence { .. }
        )
    }
}
