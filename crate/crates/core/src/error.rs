use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// Hypersphere centroid whose member sum is (numerically) the zero vector.
    #[error("degenerate centroid: member sum has norm {norm:e}")]
    DegenerateCentroid { sum: Vec<f64>, norm: f64 },

    #[error("degenerate input: vector norm {norm:e} is too small to normalize")]
    DegenerateInput { norm: f64 },

    #[error("parse error at byte offset {offset}: {message}")]
    Parse { offset: u64, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported dataset: {0}")]
    UnsupportedDataset(String),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (loss = {loss}, parameter norms = {param_norms:?})")]
    NumericalFailure {
        epoch: usize,
        batch: usize,
        loss: f64,
        param_norms: Vec<f64>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
