//! Error type shared by all modules.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown condition id '{0}'")]
    UnknownCondition(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("trajectory diverged at step {step}: {detail}")]
    TrajectoryDiverged { step: usize, detail: String },

    #[error("edit failed during {stage}: {source}")]
    EditStage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("invalid config document: {0}")]
    Schema(String),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::EditStage {
            stage,
            source: Box::new(self),
        }
    }
}
