use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("integration failed at t = {t}: {reason} (step {step:e}, {accepted} accepted / {rejected} rejected steps)")]
    IntegrationFailure {
        t: f64,
        step: f64,
        accepted: usize,
        rejected: usize,
        reason: String,
    },

    #[error("eigensolver did not converge after {iterations} iterations (residual {residual:e})")]
    EigensolverFailure { iterations: usize, residual: f64 },

    #[error("optimizer did not converge after {iterations} iterations: {reason}")]
    OptimizerFailure { iterations: usize, reason: String },

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the error class: 2 config/argument, 3 i/o and parsing,
    /// 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_) | Error::Config { .. } => 2,
            Error::Io { .. } | Error::Parse { .. } => 3,
            Error::IntegrationFailure { .. }
            | Error::EigensolverFailure { .. }
            | Error::OptimizerFailure { .. } => 4,
        }
    }
}
