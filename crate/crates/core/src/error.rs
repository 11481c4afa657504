use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// One entry per violated constraint, all reported at once.
    #[error("invalid domain: {}", .0.join("; "))]
    InvalidDomain(Vec<String>),

    #[error("shape mismatch: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("fields belong to different bases")]
    BasisMismatch,

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("input is not hydrostatic-solenoidal: w(+h) residual {residual:e} exceeds {tolerance:e}")]
    NotProjected { residual: f64, tolerance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("blow-up at t = {time}: {reason}")]
    BlowUp { time: f64, reason: String },

    #[error("checkpoint {path}: {reason}")]
    Checkpoint { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
