use thiserror::Error;

pub type Result<T> = std::result::Result<T, AgentError>;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("invalid agent configuration: {0}")]
    Config(String),

    /// A loss, gradient or network output became NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The operation is not available for this agent kind.
    #[error("{0}")]
    Mode(String),

    /// The surrogate covariance stayed singular after jitter escalation.
    #[error("ill-conditioned GP covariance: {0}")]
    IllConditioned(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("replay buffer: {0}")]
    Replay(String),

    #[error(transparent)]
    Env(#[from] pulsectl_core::Error),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),
}
