use std::process::ExitCode;

use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, bad configuration or unreadable input. Exit 2.
    #[error("{0}")]
    Usage(String),
    /// A check ran and did not pass. Exit 1.
    #[error("{0}")]
    CheckFailed(String),
    /// The command started but could not finish. Exit 1.
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::CheckFailed(_) | CliError::Run(_) => 1,
        }
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn run(e: impl std::fmt::Display) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<CliError> for ExitCode {
    fn from(e: CliError) -> Self {
        ExitCode::from(e.exit_code())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
