use thiserror::Error;

pub type Result<T> = std::result::Result<T, GeoError>;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("rank error: {0}")]
    Rank(String),

    #[error("singularity: {0}")]
    Singular(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("batch of {batch} nodes is smaller than the hidden width {hidden}; QR/SVD projections need batch >= hidden")]
    BatchSize { batch: usize, hidden: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("load error: {0}")]
    Load(String),

    #[error("numerical abort at epoch {epoch}: {detail}")]
    NumericalAbort { epoch: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
