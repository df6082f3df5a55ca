use thiserror::Error;

use crate::tiers::Tier;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A line of a rollout log could not be decoded.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A decoded rollout broke one or more data-model invariants.
    #[error("rollout `{rollout_id}` (line {line}) failed validation: {}", fields.join(", "))]
    Validation {
        line: usize,
        rollout_id: String,
        fields: Vec<String>,
    },

    /// Rollouts sharing a group id disagree on task or golden actions.
    #[error("group `{group_id}` is inconsistent: {reason}")]
    Consistency { group_id: String, reason: String },

    /// A tool call names a tool that the registry does not know.
    #[error("tool `{0}` is not in the tool registry")]
    UnknownTool(String),

    #[error("estimator error: {0}")]
    Estimator(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// The calibration anchor tier has no variance in the buffer.
    #[error("calibration anchor tier `{0}` has zero variance against outcomes")]
    Anchor(Tier),

    #[error("calibration error: {0}")]
    Calibration(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
