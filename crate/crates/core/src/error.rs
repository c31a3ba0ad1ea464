use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("null action has no task-level meaning")]
    NullAction,
    #[error("unknown action name `{0}`")]
    UnknownSymbol(String),
    #[error("invalid control mapping: {0}")]
    InvalidMapping(String),
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("value out of range: {0}")]
    Range(String),
    #[error("no data for row `{0}` and no smoothing")]
    EmptyData(String),
    #[error("invalid calibration sample: {0}")]
    InvalidSample(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("task already complete")]
    TaskComplete,
    #[error("value out of range: {0}")]
    Range(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_))
    }
}
