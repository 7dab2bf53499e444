use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UnetError {
    #[error("invalid network config: {0}")]
    Config(String),
    #[error("invalid training config: {0}")]
    TrainConfig(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error("loss became non-finite at epoch {epoch}, step {step}")]
    Diverged { epoch: usize, step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] meltpool_core::Error),
}

pub type Result<T> = std::result::Result<T, UnetError>;
