use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid maze state: {0}")]
    InvalidState(String),

    #[error("maze layout error: {0}")]
    Layout(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate group: k = {k} of G = {group_size}")]
    DegenerateGroup { k: usize, group_size: usize },

    #[error("group advantages have not been computed")]
    AdvantagesUnset,

    #[error("non-finite gradient entry at row {key}, action {action}")]
    NonFiniteGradient { key: usize, action: usize },

    #[error("base policy unfit: {0}")]
    UnfitBasePolicy(String),

    #[error("repair error: {0}")]
    Repair(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("off-distribution target: {0}")]
    OffDistribution(String),

    #[error("maze too constrained: {0}")]
    MazeTooConstrained(String),

    #[error("degenerate probe set: {0}")]
    DegenerateProbeSet(String),

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
