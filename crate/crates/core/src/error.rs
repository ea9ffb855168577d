use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("quadrature did not converge: {what} (estimated error {estimate:e})")]
    Quadrature { what: String, estimate: f64 },

    #[error("rejection sampling exceeded {0} iterations")]
    SamplingCap(usize),

    #[error("frame mismatch: expected {expected}, found {found}")]
    Frame { expected: &'static str, found: &'static str },

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("extrapolation outside sampled window: {0}")]
    Extrapolation(String),

    #[error("binning mismatch: {0}")]
    Binning(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("missing inputs: {}", .0.join(", "))]
    MissingInputs(Vec<String>),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        Error::Parse { path: path.into(), msg: msg.to_string() }
    }
}
