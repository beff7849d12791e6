use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("action index {index} out of range for {n_actions} actions")]
    ActionOutOfRange { index: usize, n_actions: usize },

    #[error("buffer holds {available} entries, {requested} requested")]
    Underfilled { available: usize, requested: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("episode already finished; call reset first")]
    EpisodeDone,

    #[error("goal unreachable from the current state")]
    Unreachable,

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("no preimage action for abstract action {abstract_action} in state {state}")]
    NoPreimage { state: usize, abstract_action: usize },

    #[error("format error in {context}: {message}")]
    Format { context: String, message: String },

    #[error("unknown baseline `{0}`")]
    UnknownBaseline(String),

    #[error("insufficient runs: need {needed}, got {got}")]
    InsufficientRuns { needed: usize, got: usize },

    #[error("stage `{stage}` failed: {message}")]
    Stage { stage: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn format(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { context: context.into(), message: message.into() }
    }
}
