use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("arrival probability {rate} for branch {branch}, title {title} exceeds 1")]
    CalibrationOverflow { branch: usize, title: usize, rate: f64 },

    #[error("state space of {states} exceeds the limit of {limit}")]
    StateSpaceTooLarge { states: u64, limit: u64 },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("baseline for branch {branch} is zero")]
    ZeroBaseline { branch: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("no title survived availability pruning")]
    EmptyScenario,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidScenario(_) => "InvalidScenario",
            Error::InvalidPolicy(_) => "InvalidPolicy",
            Error::CalibrationOverflow { .. } => "CalibrationOverflow",
            Error::StateSpaceTooLarge { .. } => "StateSpaceTooLarge",
            Error::InvalidInstance(_) => "InvalidInstance",
            Error::ZeroBaseline { .. } => "ZeroBaseline",
            Error::Config(_) => "ConfigError",
            Error::EmptyScenario => "EmptyScenario",
            Error::Io { .. } => "FileError",
            Error::Format { .. } => "FormatError",
        }
    }
}
