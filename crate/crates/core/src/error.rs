use thiserror::Error;

pub type Result<T> = std::result::Result<T, KgError>;

#[derive(Debug, Error)]
pub enum KgError {
    #[error("size mismatch: expected {expected}, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid metric: {0}")]
    InvalidMetric(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("time {0} is not a node of the time grid")]
    OffGrid(f64),

    #[error("operator is not positive: smallest eigenvalue {0:e}")]
    NotPositive(f64),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("source support too close to the time boundary: {0}")]
    SourceTooClose(String),

    #[error("evolution blew up: norm growth {growth:e} exceeds {limit:e}")]
    BlowUp { growth: f64, limit: f64 },

    #[error("linear system is singular to working precision")]
    Singular,

    #[error("fixed-point iteration did not contract (ratio {0:.3})")]
    NoContraction(f64),

    #[error("probe window clipped by the grid: {0}")]
    WindowClipped(String),
}

impl KgError {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        KgError::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
