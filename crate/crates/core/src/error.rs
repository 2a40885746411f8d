use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("state has {found} sliders but the scene expects {expected}")]
    SliderCount { expected: usize, found: usize },

    #[error("state vector has length {found}, expected {expected}")]
    VectorLength { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("contact angle is undefined for a zero pusher velocity")]
    ZeroVelocity,

    #[error("non-finite state produced by {0}")]
    NonFinite(String),

    #[error("workspace too crowded: no valid placement after {0} attempts")]
    WorkspaceTooCrowded(usize),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("parareal iteration {iteration}, slice {slice}: {source}")]
    Slice {
        iteration: usize,
        slice: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
