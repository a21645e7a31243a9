use thiserror::Error;

/// Errors raised by the clustering library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("cardinality specification violated: {0}")]
    SpecViolation(String),
    #[error("cluster {0} is empty")]
    DegenerateCluster(usize),
    #[error("precondition failed: {message} (max residual {residual:.3e})")]
    Precondition { message: String, residual: f64 },
    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("ingest error at row {row}, column '{column}': {message}")]
    Ingest {
        row: usize,
        column: String,
        message: String,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
