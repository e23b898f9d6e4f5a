use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text. `location` names the row or field.
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    /// Well-formed input that violates a model invariant.
    #[error("invalid case at {location}: {message}")]
    Validation { location: String, message: String },

    #[error("disturbance drives branch {branch} admittance to {value}")]
    InvalidDisturbance { branch: usize, value: f64 },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("island {component} has net injection {imbalance:e} pu")]
    InfeasibleFlow { component: usize, imbalance: f64 },

    #[error("{0} is undefined under the hard-threshold survival model")]
    HardThreshold(&'static str),

    #[error("projection called with negative multiplier {0}")]
    NegativeMultiplier(f64),

    #[error("saddle-point integration diverged at step {step} (t = {time})")]
    Divergence { step: usize, time: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
