//! Crate-wide error type.

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (rejected at load or construction time).
    #[error("config error: {0}")]
    Config(String),

    /// A question template cannot be instantiated on the given scene.
    /// Recoverable: callers skip the template or resample.
    #[error("template {template} not instantiable: {reason}")]
    TemplateSkip { template: String, reason: String },

    /// Malformed structured caption text.
    #[error("caption parse error: {0}")]
    Caption(String),

    /// Token id outside the active vocabulary.
    #[error("unknown token id {0} (vocab size {1})")]
    UnknownToken(usize, usize),

    /// Shape mismatch between a trajectory and its recorded log-probabilities.
    #[error("trajectory has {tokens} tokens but {logprobs} recorded log-probs")]
    LogprobMismatch { tokens: usize, logprobs: usize },

    /// Judge endpoint failure after retries, or an unusable judge reply.
    #[error("judge error: {0}")]
    Judge(String),

    /// Checkpoint schema does not match the active policy schema.
    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    /// Empty or otherwise unusable dataset.
    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code for the CLI: 1 config, 3 judge endpoint, 2 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Judge(_) => 3,
            _ => 2,
        }
    }
}
