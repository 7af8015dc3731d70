use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error(
        "line {line}: timestamp {current} does not advance past previous timestamp {previous}"
    )]
    NonMonotonic {
        line: u64,
        previous: f64,
        current: f64,
    },

    #[error("frequency must be positive, got {0}")]
    NonPositiveFrequency(f64),

    #[error("delivery failed after {attempts} attempt(s): {message}")]
    Delivery { attempts: u32, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
