use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("grid mismatch: fields live on different grids")]
    GridMismatch,
    #[error("unsupported shape for {op}: {shape}")]
    UnsupportedShape { op: &'static str, shape: String },
    #[error("divergence: {0}")]
    Divergence(String),
    #[error("eigensolver failure: {0}")]
    Eigen(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
