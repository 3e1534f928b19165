use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates a documented precondition.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Two operands live on different frequency grids.
    #[error("frequency grid mismatch")]
    GridMismatch,

    /// The field is identically zero where a non-zero pulse is required.
    #[error("zero field: {0}")]
    ZeroField(&'static str),

    /// A pulse metric could not be measured, typically because the pulse is
    /// truncated by the simulation window.
    #[error("measurement failed: {0}")]
    Measurement(String),

    /// An environment method was called in the wrong episode state.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("PNG encoding error: {0}")]
    Png(String),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
