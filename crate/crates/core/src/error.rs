use thiserror::Error;

/// Error type shared across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid coordinate: {0}")]
    InvalidCoordinate(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("conflicting-UAV construction rejected: {0}")]
    ConstructionRejected(String),

    #[error("scenario generation failed after {rejections} consecutive rejections (seed {seed}, placed {placed}/{target})")]
    GenerationFailed {
        seed: u64,
        rejections: usize,
        placed: usize,
        target: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid environment state: {0}")]
    InvalidState(String),

    #[error("replay buffer holds {have} transitions, {need} required")]
    BufferUnderfull { have: usize, need: usize },

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
