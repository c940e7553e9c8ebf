use thiserror::Error;

/// Errors raised by the numerical routines and experiment runners.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    /// The integrator produced a non-finite state; retry with a smaller step.
    #[error("numerical blowup at t = {t}: {detail}")]
    NumericalBlowup { t: f64, detail: String },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
