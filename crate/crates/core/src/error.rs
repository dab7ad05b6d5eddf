use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown condition `{0}`")]
    UnknownCondition(String),

    #[error("latent norm {norm} exceeds ball radius {radius}")]
    OutOfBall { norm: f64, radius: f64 },

    #[error("capacity exceeded: {units} hidden units, cap is {cap}")]
    Capacity { units: usize, cap: usize },

    #[error("degenerate class: {0}")]
    DegenerateClass(String),

    #[error("mode conflict: {0}")]
    ModeConflict(String),

    #[error("unsupported measurement mode: {0}")]
    Mode(String),

    #[error("recovery diverged at restart {restart}, step {step}: objective {objective}")]
    Divergence {
        restart: usize,
        step: usize,
        objective: f64,
    },

    #[error("no S-REC certificate: distortion {tau_hat} is not below 1")]
    NoCertificate { tau_hat: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
