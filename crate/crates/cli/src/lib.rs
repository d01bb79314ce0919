//! Experiment runner for the `mpis` command-line tool.

pub mod config;
pub mod runner;
pub mod svg;
pub mod verify;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl From<mpis::error::Error> for CliError {
    fn from(e: mpis::error::Error) -> Self {
        use mpis::error::Error as E;
        match e {
            E::SizeCap { .. } | E::UnknownModel(_) | E::InvalidModel(_) | E::Cycle(_) | E::Usage(_) => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("cannot write {}: {e}", path.display()))
}
