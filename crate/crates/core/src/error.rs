use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix is singular to working precision")]
    Singular,

    #[error("eigenvalue iteration did not converge after {iterations} sweeps")]
    NoConvergence { iterations: usize },

    #[error("eigenvalues not separated: cluster {cluster}")]
    ClusteredEigenvalues { cluster: String },

    #[error("block-diagonal reconstruction residual {residual:e} exceeds tolerance")]
    ReconstructionFailed { residual: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("spectral radius {radius} of the MA matrix is not below one")]
    NotInvertible { radius: f64 },

    #[error("non-finite gradient in tensor `{tensor}`")]
    NonFiniteGradient { tensor: String },

    #[error("training diverged at epoch {epoch} (last finite epoch {last_good_epoch})")]
    Diverged { epoch: usize, last_good_epoch: usize },

    #[error("forward cache does not match the model: {0}")]
    StaleCache(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn mismatch(op: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::DimensionMismatch {
        op,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
