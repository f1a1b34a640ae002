use std::io;

use thiserror::Error;

/// Errors raised by the toolkit. Each variant names the failure class; the
/// message carries the module-level context.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("power iteration did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error("covariance is not positive semi-definite (pivot {pivot:e} at index {index} after jitter)")]
    Decomposition { index: usize, pivot: f64 },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("training diverged at epoch {epoch}: {reason}")]
    Training { epoch: usize, reason: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("class estimation failed: {0}")]
    Estimation(String),

    #[error("concentration estimate is singular: mean resultant length {0} is too close to 1")]
    Singularity(f64),

    #[error("candidate set is empty: {0}")]
    EmptyCandidates(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
