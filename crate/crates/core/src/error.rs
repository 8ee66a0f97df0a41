use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    State(String),

    /// Learning found an object whose candidate set at `level` was empty.
    #[error("build failure: empty candidate set for object {object} at level {level}")]
    BuildFailure { object: usize, level: usize },

    #[error("search failure: empty candidate set at level {level}")]
    SearchFailure { level: usize },

    #[error("parameterization error: {0}")]
    Parameterization(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
