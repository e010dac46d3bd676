use std::path::PathBuf;

use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A value outside the outcome space of its target.
    #[error("domain error: {0}")]
    Domain(String),

    /// A caller broke an operation's precondition (mismatched schemes, bad lengths, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// Invalid or missing configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// An input file failed validation. Every offending line is listed.
    #[error("failed to ingest {path}: {}", .problems.join("; "))]
    Ingest {
        path: PathBuf,
        problems: Vec<String>,
    },

    /// A model could not be fitted or could not predict.
    #[error("fit error: {0}")]
    Fit(String),

    /// Training data that cannot be used as given.
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn ingest(path: impl Into<PathBuf>, problems: Vec<String>) -> Self {
        Error::Ingest {
            path: path.into(),
            problems,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
