use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("numeric error: non-finite value produced by {0}")]
    NonFinite(String),
    #[error("graph error: {0}")]
    Graph(String),
}
