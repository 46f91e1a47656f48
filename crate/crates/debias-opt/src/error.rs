use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or shape disagreement between inputs.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Configuration file or argument failed schema validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// Dataset construction or dataset/method mismatch.
    #[error("data error: {0}")]
    Data(String),

    /// A quantity that must be finite was not.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Training or solving blew up; carries the iteration it was detected at.
    #[error("divergence in {what} at iteration {iter}")]
    Divergence { what: String, iter: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
