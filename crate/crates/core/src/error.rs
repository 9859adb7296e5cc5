use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("{what} out of range: {value} exceeds {limit}")]
    Range { what: &'static str, value: usize, limit: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("innovation covariance is not positive definite")]
    SingularInnovation,

    #[error("hypothesis explosion at scan {scan}: {count} descendants exceeds cap {cap}")]
    Explosion { scan: u32, count: usize, cap: usize },

    #[error("count of {what} exceeds bound {bound}")]
    CountOverflow { what: &'static str, bound: u64 },

    #[error("oracle resource guard: {0}")]
    ResourceGuard(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn model(msg: impl Into<String>) -> Self {
        Error::InvalidModel(msg.into())
    }
}
