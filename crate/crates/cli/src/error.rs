//! Errors surfaced by the command-line tool and their exit codes.

use qfa_core::QfaError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] QfaError),

    /// Flags that parse but do not make sense together.
    #[error("invalid arguments: {0}")]
    Usage(String),

    #[error("cannot write `{path}`: {source}")]
    Output {
        path: String,
        source: std::io::Error,
    },
}

/// Input data could not be read or used.
pub const EXIT_INPUT: i32 = 2;
/// An estimator broke down numerically.
pub const EXIT_NUMERICAL: i32 = 3;
/// Inconsistent flags or configuration.
pub const EXIT_CONFIG: i32 = 4;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_CONFIG,
            CliError::Output { .. } => EXIT_INPUT,
            CliError::Core(e) => match e {
                QfaError::Config(_) | QfaError::Domain(_) => EXIT_CONFIG,
                QfaError::Numerical { .. }
                | QfaError::NoConvergence(_)
                | QfaError::RankDeficient(_) => EXIT_NUMERICAL,
                QfaError::Input(_)
                | QfaError::ConstantSeries { .. }
                | QfaError::Csv(_)
                | QfaError::Io(_)
                | QfaError::Json(_) => EXIT_INPUT,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
