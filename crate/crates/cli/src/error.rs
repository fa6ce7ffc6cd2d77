use std::path::PathBuf;

use contrastkit::CdrError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("every candidate background was rejected as invalid")]
    NoValidBackground,
    #[error(transparent)]
    Numerical(#[from] CdrError),
}

impl CliError {
    /// Process exit code: 2 workflow stop, 3 configuration or input
    /// problem, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::NoValidBackground => 2,
            CliError::Config(_) | CliError::Parse { .. } | CliError::Io { .. } => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
