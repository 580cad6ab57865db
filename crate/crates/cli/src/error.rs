use thiserror::Error;

/// Failures surfaced to the shell, each with its own exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid input, or an unusable output location.
    #[error("{0}")]
    Config(String),
    /// The numerics failed: solver abort, blow-up, or a failed self-check.
    #[error("{0}")]
    Abort(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Abort(_) => 2,
        }
    }
}

impl From<aao_core::Error> for CliError {
    fn from(e: aao_core::Error) -> Self {
        match e {
            aao_core::Error::Solver(_) | aao_core::Error::BlowUp { .. } => {
                CliError::Abort(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
