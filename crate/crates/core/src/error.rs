use thiserror::Error;

/// Failure while evaluating a residual block.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("residual block {index} produced a non-finite value")]
    NonFinite { index: usize },
    #[error("residual block {index} is out of range (model has {len} blocks)")]
    OutOfRange { index: usize, len: usize },
    #[error("residual block {index}: {reason}")]
    Invalid { index: usize, reason: String },
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("cost at the starting point is not finite")]
    InvalidStart,
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("damped normal matrix is not positive definite (lambda = {lambda:e})")]
    NotPositiveDefinite { lambda: f64 },
}
