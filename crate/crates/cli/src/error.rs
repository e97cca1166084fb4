use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot access {}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{0}")]
    Parse(String),

    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },

    #[error("{experiment} failed: {source}")]
    Numeric {
        experiment: &'static str,
        source: prehistory::Error,
    },

    #[error("{experiment}: {reason}")]
    Check {
        experiment: &'static str,
        reason: String,
    },
}

impl CliError {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Core errors caused by bad inputs surface as validation failures.
    pub fn from_core(experiment: &'static str, e: prehistory::Error) -> Self {
        match e {
            prehistory::Error::InvalidParameter { name, reason } => {
                CliError::validation(name, reason)
            }
            e if e.is_validation() => CliError::validation(experiment, e.to_string()),
            e => CliError::Numeric {
                experiment,
                source: e,
            },
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Parse(_) | CliError::Validation { .. } => 2,
            CliError::Numeric { .. } | CliError::Check { .. } => 3,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
