use ddt_nn::NnError;
use ddt_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("singular input: {0}")]
    Singular(String),
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("unrecognized file format: {0}")]
    Format(String),
    #[error("corrupt file at byte {offset}: {detail}")]
    Corrupt { offset: u64, detail: String },
    #[error("incompatible {0}")]
    Compat(String),
    #[error("non-finite value at {context}")]
    Numeric { context: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
