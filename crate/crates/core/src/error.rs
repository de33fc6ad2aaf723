use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("malformed input: {0}")]
    Malformed(String),

    #[error("signal is empty after trimming")]
    EmptyAfterTrim,

    #[error("signal too short: {len} samples, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("incompatible signals: {0}")]
    Incompatible(String),

    #[error("registration is empty")]
    EmptyRegistration,

    #[error("insufficient registration: got {got} signals, need at least {need}")]
    InsufficientRegistration { got: usize, need: usize },

    #[error("insufficient training data: {0}")]
    InsufficientTrainingData(String),

    #[error("SMO did not converge after {passes} passes")]
    Convergence { passes: usize },

    #[error("degenerate task: {0}")]
    DegenerateTask(String),

    #[error("training failed: {0}")]
    TrainingFailure(String),

    #[error("insufficient scores: {0}")]
    InsufficientScores(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("{} invalid signal(s): {}", .0.len(), .0.join("; "))]
    InvalidSignals(Vec<String>),

    #[error("account locked: {0}")]
    Locked(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
