use std::path::{Path, PathBuf};

use serde::Serialize;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] happymap::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}:{column}: {message}")]
    ConfigParse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}:{line}:{column}: {message}")]
    Data {
        path: PathBuf,
        line: u64,
        column: usize,
        message: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(happymap::Error::InvalidInput(_)) => "invalid-input",
            CliError::Core(happymap::Error::InvalidConfig(_)) => "invalid-config",
            CliError::Core(happymap::Error::DimensionMismatch { .. }) => "dimension-mismatch",
            CliError::Core(happymap::Error::Parse { .. }) => "parse",
            CliError::Core(happymap::Error::NonFinite(_)) => "non-finite",
            CliError::Io { .. } => "io",
            CliError::ConfigParse { .. } | CliError::Config(_) => "invalid-config",
            CliError::Data { .. } => "parse",
            CliError::Csv(_) => "csv",
            CliError::Json(_) => "json",
        }
    }
}

/// Contents of `error.json`.
#[derive(Debug, Serialize)]
pub struct ErrorRecord<'a> {
    pub command: &'a str,
    pub kind: &'a str,
    pub message: String,
}
