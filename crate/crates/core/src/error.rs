use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty point set")]
    EmptyPointSet,

    #[error("non-finite state encountered at t = {time}")]
    NonFinite { time: f64 },

    #[error("trajectory left the safety box at t = {time}")]
    BlowUp { time: f64 },

    #[error("system is not continuous-time; rk4 needs a vector field")]
    NotContinuous,

    #[error("Gram matrix is singular and the ridge parameter is zero")]
    SingularGram,

    #[error("eigensolver failed to converge: {0}")]
    Eigensolver(String),

    #[error("bound constants unusable for rank {rank}: mu_r = {mu_r:e}")]
    UnusableRank { rank: usize, mu_r: f64 },

    #[error("dataset inconsistent with its system: {0}")]
    InconsistentDataset(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed file {path}: {reason}")]
    Format { path: String, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;
