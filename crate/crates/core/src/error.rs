use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("field is in {found} representation, expected {expected}")]
    Representation {
        expected: &'static str,
        found: &'static str,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch: expected {expected} entries, found {found}")]
    Shape { expected: usize, found: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
