use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    /// A configuration value is missing, unknown or out of range.
    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },
    /// An argument outside a function's mathematical domain.
    #[error("domain error: {0}")]
    Domain(String),
    /// A caller broke an operation's precondition (e.g. asked for the LoS
    /// rate of a user served through the RIS).
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed data in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Nn(#[from] thzvr_nn::NnError),
}

impl CoreError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CoreError::Config { key: key.into(), reason: reason.into() }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, reason: impl ToString) -> Self {
        CoreError::Parse { path: path.into(), reason: reason.to_string() }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, CoreError::Config { .. })
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
