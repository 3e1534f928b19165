use pulsectl_agents::AgentError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("I/O failure: {0}")]
    Io(String),
}

impl HarnessError {
    pub fn with_context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            HarnessError::Config(m) => HarnessError::Config(format!("{ctx}: {m}")),
            HarnessError::Numerical(m) => HarnessError::Numerical(format!("{ctx}: {m}")),
            HarnessError::Io(m) => HarnessError::Io(format!("{ctx}: {m}")),
        }
    }

    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Numerical(_) => 3,
            HarnessError::Io(_) => 4,
        }
    }
}

impl From<pulsectl_core::Error> for HarnessError {
    fn from(e: pulsectl_core::Error) -> Self {
        use pulsectl_core::Error as E;
        match e {
            E::Config(_) | E::Usage(_) | E::GridMismatch => HarnessError::Config(e.to_string()),
            E::ZeroField(_) | E::Measurement(_) => HarnessError::Numerical(e.to_string()),
            E::Io(_) | E::Png(_) => HarnessError::Io(e.to_string()),
        }
    }
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        match e {
            AgentError::Env(inner) => inner.into(),
            AgentError::NonFinite(_) | AgentError::IllConditioned(_) => HarnessError::Numerical(e.to_string()),
            AgentError::Io(_) => HarnessError::Io(e.to_string()),
            AgentError::Config(_)
            | AgentError::Mode(_)
            | AgentError::Checkpoint(_)
            | AgentError::Replay(_)
            | AgentError::Json(_) => HarnessError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
