use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Zero CPU frequency with a non-empty workload.
    #[error("infinite computation delay for user {user}: CPU frequency is zero")]
    InfiniteDelay { user: usize },

    #[error("non-positive transmission rate ({rate} bit/s)")]
    InfeasibleRate { rate: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty group")]
    EmptyGroup,

    #[error("gradient descent diverged (norm grew from {initial:e} to {current:e})")]
    Divergence { initial: f64, current: f64 },

    #[error("schema mismatch: expected `{expected}`, found `{found}`")]
    Schema { expected: String, found: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
