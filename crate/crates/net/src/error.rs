use thiserror::Error;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite {what} at {context}")]
    NonFinite { what: String, context: String },

    #[error("training aborted at epoch {epoch}: {reason}; last good checkpoint: {checkpoint}")]
    TrainAborted {
        epoch: usize,
        reason: String,
        checkpoint: String,
    },

    #[error("checkpoint error in {path}: {reason}")]
    Checkpoint { path: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] hpqsm_core::CoreError),
}

pub type Result<T> = std::result::Result<T, NetError>;

impl NetError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        NetError::Io { path: path.into(), source }
    }

    pub fn checkpoint(path: impl Into<String>, reason: impl Into<String>) -> Self {
        NetError::Checkpoint { path: path.into(), reason: reason.into() }
    }
}
