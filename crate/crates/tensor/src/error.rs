use thiserror::Error;

#[derive(Debug, Clone, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: data length {got} does not match shape {shape:?} (expected {expected})")]
    DataLength {
        op: &'static str,
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("{op}: invalid argument: {msg}")]
    InvalidArgument { op: &'static str, msg: String },

    #[error("{context}: non-finite value {value} at index {index}")]
    NonFinite {
        context: String,
        value: f64,
        index: usize,
    },

    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("optimizer: non-finite gradient for parameter `{name}`")]
    NonFiniteGradient { name: String },

    #[error("optimizer: no parameter named `{name}`")]
    UnknownParameter { name: String },

    #[error("embedding: token id {id} out of range for vocab {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;
