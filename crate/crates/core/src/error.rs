use thiserror::Error;

/// Errors produced by the estimators and their supporting routines.
#[derive(Debug, Error)]
pub enum QfaError {
    /// A scalar argument lies outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An estimator or panel configuration is inconsistent.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Malformed or unusable input data.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("series `{label}` has zero sample variance")]
    ConstantSeries { label: String },

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    /// A linear-algebra step broke down inside an iterative estimator.
    #[error("numerical failure in {block} at iteration {iteration}: {detail}")]
    Numerical {
        block: String,
        iteration: usize,
        detail: String,
    },

    #[error("solver did not converge: {0}")]
    NoConvergence(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl QfaError {
    pub(crate) fn numerical(block: &str, iteration: usize, detail: impl Into<String>) -> Self {
        QfaError::Numerical {
            block: block.to_string(),
            iteration,
            detail: detail.into(),
        }
    }

    /// Attach an iteration index to a numerical failure raised without one.
    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        match self {
            QfaError::Numerical { block, detail, .. } => QfaError::Numerical {
                block,
                iteration,
                detail,
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, QfaError>;
