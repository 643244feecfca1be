use landau_core::nn::NnError;
use landau_core::LandauError;
use thiserror::Error;

use crate::config::ConfigError;

/// Failure of a command; [`CliError::exit_code`] is the process status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    /// 1 config, 2 numeric, 3 i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numeric(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    pub fn io(path: &std::path::Path, e: impl std::fmt::Display) -> Self {
        CliError::Io(format!("{}: {e}", path.display()))
    }
}

impl From<LandauError> for CliError {
    fn from(e: LandauError) -> Self {
        match e {
            LandauError::Config(m) => CliError::Config(ConfigError::new(m)),
            LandauError::Io(m) => CliError::Io(m),
            LandauError::Nn(NnError::Io(io)) => CliError::Io(io.to_string()),
            LandauError::Nn(NnError::Checkpoint(m)) => CliError::Io(format!("checkpoint: {m}")),
            other => CliError::Numeric(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
