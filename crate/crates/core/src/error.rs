use std::io;

use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("transfer function is singular at omega = {omega} rad/s (resonance at {eigenvalue} rad/s)")]
    Resonance { omega: f64, eigenvalue: f64 },

    #[error("simulation diverged at step {step}: |x_{state}| = {magnitude:e}")]
    Unstable {
        step: usize,
        state: usize,
        magnitude: f64,
    },

    #[error("sequence too short: need at least {required} samples, got {actual}")]
    TooShort { required: usize, actual: usize },

    #[error("RLS breakdown at iteration {iteration}: denominator {denominator:e} is not positive")]
    RlsBreakdown { iteration: usize, denominator: f64 },

    #[error("LMS diverged at iteration {iteration}: |h| = {norm:e} exceeds {threshold:e}")]
    LmsDiverged {
        iteration: usize,
        norm: f64,
        threshold: f64,
    },

    #[error("correlation matrix is rank deficient at coordinate {index} ({coordinate})")]
    RankDeficient { index: usize, coordinate: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            what,
            reason: reason.into(),
        }
    }
}
