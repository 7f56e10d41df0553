use thiserror::Error;

/// Errors surfaced by the environment, trainer, and harness.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Invalid configuration value or combination.
    #[error("config error: {0}")]
    Config(String),

    /// A caller broke an API contract (e.g. stepping a finished episode).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Checkpoint file is malformed or incompatible.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    /// Trajectory dump is malformed or inconsistent with the dynamics.
    #[error("replay error: {0}")]
    Replay(String),

    /// Training produced non-finite numbers and was stopped.
    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn config(msg: impl Into<String>) -> Self {
        CoreError::Config(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        CoreError::Contract(msg.into())
    }

    pub fn checkpoint(msg: impl Into<String>) -> Self {
        CoreError::Checkpoint(msg.into())
    }
}
