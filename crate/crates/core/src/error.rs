use heatmap_bfv::HeError;
use thiserror::Error;

use crate::protocol::RejectReason;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    He(#[from] HeError),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("request rejected ({reason}): {detail}")]
    Rejected { reason: RejectReason, detail: String },
    #[error("wire error: {0}")]
    Wire(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("sampler exceeded its iteration cap")]
    SamplerExhausted,
    #[error("ledger error: {0}")]
    Ledger(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn rejected(reason: RejectReason, detail: impl Into<String>) -> Self {
        CoreError::Rejected {
            reason,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
