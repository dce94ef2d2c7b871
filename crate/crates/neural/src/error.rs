use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {got:?}")]
    Shape { context: &'static str, expected: Vec<usize>, got: Vec<usize> },
    #[error("backward called on `{0}` before forward")]
    NoForwardCache(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid loss input: {0}")]
    Loss(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),
}

pub type Result<T> = std::result::Result<T, NnError>;
