use std::path::Path;

use onsager::analysis::AnalysisError;
use onsager::integrate::IntegrateError;
use onsager::reduce::ReduceError;
use onsager::systems::SystemError;
use onsager::train::TrainError;
use thiserror::Error;

/// Failure of a command, split by the exit code it maps to.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, missing or malformed input files (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Non-finite values or diverging computations (exit code 3).
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }

    pub fn input(msg: impl Into<String>) -> Self {
        CliError::Input(msg.into())
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }

    pub fn json(path: &Path, err: serde_json::Error) -> Self {
        CliError::Input(format!("{}: {err}", path.display()))
    }
}

impl From<TrainError> for CliError {
    fn from(err: TrainError) -> Self {
        match err {
            TrainError::InvalidConfig(_) | TrainError::TauMismatch { .. } | TrainError::EmptyBatch => {
                CliError::Input(err.to_string())
            }
            _ => CliError::Numeric(err.to_string()),
        }
    }
}

impl From<SystemError> for CliError {
    fn from(err: SystemError) -> Self {
        match err {
            SystemError::InvalidConfig(_) => CliError::Input(err.to_string()),
            SystemError::BlowUp { .. } => CliError::Numeric(err.to_string()),
        }
    }
}

impl From<ReduceError> for CliError {
    fn from(err: ReduceError) -> Self {
        CliError::Input(err.to_string())
    }
}

impl From<IntegrateError> for CliError {
    fn from(err: IntegrateError) -> Self {
        match err {
            IntegrateError::InvalidStep(_) | IntegrateError::ZeroSubsteps => CliError::Input(err.to_string()),
            _ => CliError::Numeric(err.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(err: AnalysisError) -> Self {
        match err {
            AnalysisError::InvalidInput(_) => CliError::Input(err.to_string()),
            _ => CliError::Numeric(err.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
