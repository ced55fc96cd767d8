use thiserror::Error;

use crate::world::AgentId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid map geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("log parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("agent {agent} not present at step {step}")]
    MissingAgent { agent: AgentId, step: usize },
    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("dataset has no training samples")]
    EmptyDataset,
    #[error("config: {0}")]
    Config(String),
    #[error("serialization: {0}")]
    Serde(String),
    #[error(transparent)]
    Nn(#[from] nncore::NnError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for SimError {
    fn from(e: serde_json::Error) -> Self {
        SimError::Serde(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
