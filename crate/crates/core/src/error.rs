use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum DiceError {
    #[error("shape mismatch in {context}: expected {expected}, found {found}")]
    ShapeMismatch { context: &'static str, expected: String, found: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{method} did not converge after {iterations} iterations")]
    NoConvergence { method: &'static str, iterations: usize },

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("backward called without a cached forward pass")]
    BackwardWithoutForward,

    #[error("batch norm in training mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("non-finite sampler state at Gibbs iteration {iteration}")]
    NonFiniteState { iteration: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiceError>;

pub(crate) fn shape_err(context: &'static str, expected: impl ToString, found: impl ToString) -> DiceError {
    DiceError::ShapeMismatch { context, expected: expected.to_string(), found: found.to_string() }
}
