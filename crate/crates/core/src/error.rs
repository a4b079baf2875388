use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}
