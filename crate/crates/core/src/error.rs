use thiserror::Error;

use crate::grid::StateId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid grid, solver or learner parameters.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown function `{name}` (available: {available})")]
    UnknownFunction { name: String, available: String },

    #[error("function `{name}` cannot be sampled on a {dim}-dimensional grid")]
    ArityMismatch { name: String, dim: usize },

    /// Corners are absorbing; asking for their kernel is a caller bug.
    #[error("state {0:?} is a corner and has no transitions")]
    CornerTransition(StateId),

    #[error("invalid input: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnknownFunction { .. } | Error::ArityMismatch { .. }
        )
    }
}
