use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("integrity: {0}")]
    Integrity(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("lookup: {0}")]
    Lookup(String),

    #[error("format: {0}")]
    Format(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// Transport-level failure that may succeed on retry.
    #[error("retryable: {0}")]
    Retryable(String),

    #[error("protocol: {0}")]
    Protocol(String),

    #[error("generation unavailable after {attempts} attempt(s): {last_error}")]
    GenerationUnavailable { attempts: u32, last_error: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Stable machine-greppable code used by the CLI.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "E_PARSE",
            Error::Integrity(_) => "E_INTEGRITY",
            Error::Config(_) => "E_CONFIG",
            Error::Lookup(_) => "E_LOOKUP",
            Error::Format(_) => "E_FORMAT",
            Error::Input(_) => "E_INPUT",
            Error::Retryable(_) => "E_RETRYABLE",
            Error::Protocol(_) => "E_PROTOCOL",
            Error::GenerationUnavailable { .. } => "E_GENERATION_UNAVAILABLE",
            Error::Io { .. } => "E_IO",
        }
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Retryable(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: &std::path::Path, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }
}
