use thiserror::Error;

/// Errors produced anywhere in the featurization, model and training stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid audio: {0}")]
    InvalidAudio(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("schedule error: {0}")]
    Schedule(String),
    #[error("metrics error: {0}")]
    Metrics(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("wav error: {0}")]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
