use multicat_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModuleError {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged at epoch {epoch}: mean ELBO is {value}")]
    Diverged { epoch: usize, value: f64 },

    #[error("unknown document index {0}")]
    UnknownDocument(usize),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("checkpoint: {0}")]
    Checkpoint(#[from] serde_json::Error),
}

pub type Result<T, E = ModuleError> = std::result::Result<T, E>;
