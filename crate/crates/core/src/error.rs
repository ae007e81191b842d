use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("index mismatch: {0}")]
    IndexMismatch(String),

    #[error("detections {0} and {1} share a frame")]
    SameFrame(usize, usize),

    #[error("invalid box: width and height must be positive")]
    InvalidBox,

    #[error("missing network `{0}` in model parameters")]
    MissingNetwork(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("solution violates flow constraints; round first")]
    Infeasible,

    #[error("sequence too short: need {needed} frames, have {available}")]
    SequenceTooShort { needed: usize, available: usize },

    #[error("training diverged at iteration {iteration}: loss = {loss}")]
    Divergence { iteration: usize, loss: f64 },

    #[error("no ground-truth boxes to evaluate against")]
    NoGroundTruth,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
