//! Crate-wide error type.

use thiserror::Error;

/// Errors surfaced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A grid, panorama, or parameter set has an inconsistent shape or value.
    #[error("validation error: {0}")]
    Validation(String),

    /// A fixed configuration constraint was violated (e.g. width not divisible by 30).
    #[error("configuration error: {0}")]
    Config(String),

    /// A scalar argument fell outside its documented range.
    #[error("range error: {0}")]
    Range(String),

    /// An index was outside the addressed grid.
    #[error("index error: {0}")]
    Index(String),

    /// A pose or query point is inside a wall or outside the world bounds.
    #[error("pose error: {0}")]
    Pose(String),

    /// Navigation state was driven into an impossible transition.
    #[error("state error: {0}")]
    State(String),

    /// A decision response could not be parsed into an offered action.
    #[error("parse error: {0}")]
    Parse(String),

    /// The external decision backend failed after retries and fallbacks.
    #[error("backend error: {0}")]
    Backend(String),

    /// Training diverged; the message names the epoch of the last stable params.
    #[error("training error: {0}")]
    Training(String),

    /// A scene or trace file failed to load.
    #[error("load error: {0}")]
    Load(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
