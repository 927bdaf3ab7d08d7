use thiserror::Error;

/// Errors raised across the matching pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error(
        "multinomial fit did not converge after {iterations} iterations (gradient max-norm {grad_norm:.3e}); \
         this usually signals quasi-separation, retry with ridge > 0"
    )]
    NonConvergence { iterations: usize, grad_norm: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("common support is empty for arm {arm}")]
    EmptySupport { arm: usize },

    #[error("weighted mean undefined: arm {arm} has zero mass")]
    UndefinedMean { arm: usize },

    #[error("standardized bias undefined: reference standard deviation is zero for covariate {covariate}")]
    UndefinedBias { covariate: usize },

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("rank-deficient design, aliased terms: {}", .0.join(", "))]
    Aliased(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::Numerical(_)
                | Error::EmptySupport { .. }
                | Error::UndefinedMean { .. }
                | Error::UndefinedBias { .. }
                | Error::Degenerate(_)
                | Error::Aliased(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
