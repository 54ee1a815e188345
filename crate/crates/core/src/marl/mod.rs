//! Asynchronous multi-agent PPO for per-window satellite selection.

pub mod checkpoint;
pub mod nn;
pub mod observation;
pub mod policy;
pub mod ppo;
pub mod train;

use thiserror::Error;

use crate::harness::HarnessError;
use policy::Policy;

#[derive(Debug, Error)]
pub enum MarlError {
    #[error("training diverged at episode {episode}: {reason}")]
    Divergence {
        episode: usize,
        reason: String,
        last_good: Box<Policy>,
    },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Harness(#[from] Box<HarnessError>),
}

impl From<HarnessError> for MarlError {
    fn from(e: HarnessError) -> Self {
        MarlError::Harness(Box::new(e))
    }
}
