use ifassist_core::{EnvError, ModelError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown profile `{0}`")]
    UnknownProfile(String),
    #[error("profile `{0}` already exists")]
    ProfileExists(String),
    #[error("unknown session `{0}`")]
    UnknownSession(String),
    #[error("invalid phase config: {0}")]
    InvalidPhaseConfig(String),
    #[error("session `{0}` is closed")]
    SessionClosed(String),
    #[error("phase mismatch: {0}")]
    PhaseMismatch(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("storage error: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record: {0}")]
    Corrupt(String),
}

impl From<serde_json::Error> for ServiceError {
    fn from(e: serde_json::Error) -> Self {
        ServiceError::Corrupt(e.to_string())
    }
}
