use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("Jacobi sweep did not converge after {sweeps} sweeps (off-diagonal residual {residual:e})")]
    NoConvergence { sweeps: usize, residual: f64 },

    #[error("matrix exponential overflowed (|tM| too large)")]
    Overflow,

    #[error("dimension {dim} exceeds the cap of {cap}")]
    DimensionCap { dim: usize, cap: usize },

    #[error("unsupported combination: {0}")]
    Unsupported(String),

    #[error("degenerate momentum: mu^2 = 4 lambda within tolerance for lambda = {lambda}")]
    Degenerate { lambda: f64 },

    #[error("quadrature failed to reach tolerance (estimated error {estimate:e})")]
    Quadrature { estimate: f64 },

    #[error("horizon exceeded: step {k} of {steps}")]
    HorizonExceeded { k: usize, steps: usize },

    #[error("descent window is empty: {0}")]
    EmptyWindow(String),

    #[error("config error at `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
