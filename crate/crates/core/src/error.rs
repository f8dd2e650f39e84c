use thiserror::Error;

/// Errors raised across the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("iterate became non-finite at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("inner linear solve failed to reduce the Newton residual at iterate {iteration} (residual {residual:e})")]
    SingularJacobian { iteration: usize, residual: f64 },

    #[error("inner solver stopped at residual {residual:e} after {iterations} iterations without reaching tolerance")]
    InnerNotConverged { iterations: usize, residual: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("M-step Newton failed after backtracking; last gradient norm {grad_norm:e}")]
    MStep { grad_norm: f64 },

    #[error("singular Hessian ({0}); consider reducing the number of types")]
    SingularHessian(String),

    #[error("equilibrium search stopped at residual {residual:e} after {iterations} iterations")]
    Equilibrium { residual: f64, iterations: usize },

    #[error("k-means: {0}")]
    Clustering(String),

    #[error("all {starts} starts failed: {details}")]
    AllStartsFailed { starts: usize, details: String },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            actual,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
