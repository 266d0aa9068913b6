//! Error type shared across the crate.

/// Errors raised by flow conversions, operators, fields, and the solver.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time t={t} outside domain: {reason}")]
    TimeDomain { t: f64, reason: &'static str },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: &'static str },

    #[error("data-consistency descent diverged after {iters} iterations (residual {residual:.6e})")]
    Divergence { iters: usize, residual: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),
}

impl CoreError {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        CoreError::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;

/// Checks that two vectors share a dimension.
pub(crate) fn check_same_dim(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(CoreError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Checks that a vector has the expected dimension.
pub(crate) fn check_dim(x: &[f64], expected: usize) -> Result<()> {
    if x.len() != expected {
        return Err(CoreError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}
