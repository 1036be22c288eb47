use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] postnas_tensor::TensorError),

    #[error("{context}: {msg}")]
    Invalid { context: &'static str, msg: String },

    #[error("state mismatch: {msg}")]
    StateMismatch { msg: String },

    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("memory: required {required} bytes exceeds capacity {capacity} (binding constraint: {binding})")]
    MemoryExceeded {
        required: u128,
        capacity: u128,
        binding: &'static str,
    },

    #[error("search: {0}")]
    Search(String),
}

impl CoreError {
    pub fn invalid(context: &'static str, msg: impl Into<String>) -> Self {
        CoreError::Invalid {
            context,
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
