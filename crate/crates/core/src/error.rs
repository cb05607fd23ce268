use thiserror::Error;

/// Errors produced by the monitor-learning pipeline.
#[derive(Debug, Error)]
pub enum PrismError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A dataset is missing one of the two classes. Callers are expected to
    /// widen sampling and retry.
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),

    #[error("duplicate sample key (trajectory {traj_id}, t = {time_index})")]
    DuplicateKey { traj_id: u64, time_index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("operation not supported for environment `{0}`")]
    WrongEnvironment(String),

    /// A scored class has fewer cells than the reporting floor.
    #[error("insufficient support: {0}")]
    InsufficientSupport(String),

    #[error("malformed monitor file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PrismError>;
