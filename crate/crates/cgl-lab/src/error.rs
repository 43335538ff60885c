use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum LabError {
    #[error("parameters are {0}, expected critical (p - delta^2 = 0 with beta = 0)")]
    NotCritical(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("degenerate modulation: {0}")]
    Degenerate(String),
    #[error("shooting failed: {0}")]
    Shooting(String),
    #[error("config error at `{path}`: {msg}")]
    Config { path: String, msg: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, LabError>;
