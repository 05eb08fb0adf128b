use std::path::PathBuf;

use thiserror::Error;

use renewal_core::ValidationReport;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: toml::de::Error,
    },

    #[error("rate validation failed: {0}")]
    Validation(ValidationReport),

    #[error("solver error: {0}")]
    Solver(renewal_core::Error),

    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 2 config/contract, 3 validation, 4 solver or I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Read { .. } | CliError::Parse { .. } => 2,
            CliError::Validation(_) => 3,
            CliError::Solver(_) | CliError::Write { .. } => 4,
        }
    }
}

impl From<renewal_core::Error> for CliError {
    fn from(e: renewal_core::Error) -> Self {
        use renewal_core::Error as E;
        match e {
            // Broken preconditions and unparsable expressions come from the
            // configuration, not from the numerics.
            E::Contract(_) | E::Expression { .. } => CliError::Config(e.to_string()),
            other => CliError::Solver(other),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
