use thiserror::Error;

/// Errors raised across the imputation toolkit.
#[derive(Debug, Error)]
pub enum PastError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-deterministic objective")]
    NonDeterministic,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("graph stayed disconnected after {0} attempts")]
    Disconnected(usize),
    #[error("no observed entries in the training span")]
    NoObserved,
    #[error("training diverged at epoch {epoch}, batch {batch}: loss1={loss1}, loss2={loss2}")]
    Divergence {
        epoch: usize,
        batch: usize,
        loss1: f64,
        loss2: f64,
    },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PastError>;
