//! Error type shared by every module in the crate.

use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HedError>;

#[derive(Debug, Error)]
pub enum HedError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("polyak coefficient must lie in (0, 1), got {0}")]
    InvalidTau(f64),

    #[error("rho0 = {0} is outside the stable range (0, 1/2)")]
    UnstableRho0(f64),

    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("replay buffer is empty")]
    EmptyBuffer,

    #[error("invalid config field `{field}`: {message}")]
    InvalidConfig {
        field: &'static str,
        message: String,
    },

    #[error("unknown gradient check target `{0}`")]
    UnknownGradFn(String),

    #[error("degenerate scenario: {0}")]
    Degenerate(&'static str),

    #[error("high-level session does not match ensemble: {0}")]
    SessionMismatch(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(HedError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
