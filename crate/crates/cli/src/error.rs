//! Error classes and their process exit codes.

use crowd_nas::{DataError, GenotypeError, NetworkError, TrainError};
use thiserror::Error;

/// Exit-code table shown in `--help`.
pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  E_INTERNAL  unexpected internal failure
  2  E_USAGE     bad command line
  3  E_CONFIG    config file or override violates the schema
  4  E_INPUT     missing or invalid input artifact
  5  E_DIVERGED  training loss became non-finite or exploded
  6  E_IO        an output artifact could not be written

Failures print a single line: error[CODE]: message";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Diverged(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "E_USAGE",
            CliError::Config(_) => "E_CONFIG",
            CliError::Input(_) => "E_INPUT",
            CliError::Diverged(_) => "E_DIVERGED",
            CliError::Io(_) => "E_IO",
            CliError::Internal(_) => "E_INTERNAL",
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Config(_) => 3,
            CliError::Input(_) => 4,
            CliError::Diverged(_) => 5,
            CliError::Io(_) => 6,
        }
    }

    /// The one-line form printed to stderr.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("error[{}]: {}", self.code(), msg.trim())
    }

    /// Classifies a failure while reading an input artifact.
    pub fn input(e: impl std::fmt::Display) -> Self {
        CliError::Input(e.to_string())
    }

    /// Classifies a failure while writing an output artifact.
    pub fn io(e: impl std::fmt::Display) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Config(_) => CliError::Config(e.to_string()),
            NetworkError::GenotypeMismatch(_) => CliError::Input(e.to_string()),
            NetworkError::Tensor(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => CliError::Diverged(e.to_string()),
            TrainError::Schedule(_) => CliError::Config(e.to_string()),
            TrainError::EmptySplit(_) => CliError::Input(e.to_string()),
            TrainError::Network(n) => n.into(),
            TrainError::Data(d) => CliError::Input(d.to_string()),
            TrainError::Tensor(_) => CliError::Internal(e.to_string()),
        }
    }
}

impl From<GenotypeError> for CliError {
    fn from(e: GenotypeError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Malformed { .. } => CliError::Input(e.to_string()),
            DataError::EmptyCountRange(..) | DataError::ImageSize(_) | DataError::Radius(_) => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Internal(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
