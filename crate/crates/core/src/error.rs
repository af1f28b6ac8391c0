use alloc::boxed::Box;
use alloc::string::String;

use crate::gpn::{Discriminator, Generator};

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Last parameters that produced finite losses.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub epoch: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid arm model: {0}")]
    InvalidArm(String),
    #[error("time {t} outside [0, {t_end}]")]
    OutOfRange { t: f64, t_end: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ball released at or below the floor (z = {z})")]
    InvalidRelease { z: f64 },
    #[error("search failed: {0}")]
    SearchFailed(String),
    #[error("repertoire is empty")]
    EmptyRepertoire,
    #[error("cached activations are stale or belong to another network")]
    InvalidCache,
    #[error("insufficient data: {have} entries, need at least {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("training diverged at epoch {epoch}, iteration {iteration}")]
    TrainingDiverged {
        epoch: usize,
        iteration: usize,
        checkpoint: Option<Box<Checkpoint>>,
    },
    #[error("kernel matrix not positive definite after jitter {jitter:e}")]
    CholeskyFailure { jitter: f64 },
    #[error("insufficient trials: {0}")]
    InsufficientTrials(String),
    #[error("degenerate sample: both samples have zero variance")]
    DegenerateSample,
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, actual })
    }
}
