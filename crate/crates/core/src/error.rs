use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("view {view} has no depth map")]
    MissingDepth { view: usize },

    #[error("view {view} has no degraded render")]
    MissingRender { view: usize },

    #[error("training diverged at step {step}: {diagnostics}")]
    Diverged { step: u64, diagnostics: String },

    #[error(transparent)]
    Numerics(#[from] geofuse_numerics::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }
}
