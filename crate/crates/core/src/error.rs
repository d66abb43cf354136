use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter interval [{lo}, {hi}]: lower bound must be strictly below upper bound")]
    InvalidInterval { lo: f64, hi: f64 },

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{what} = {value} lies outside [-1, 1]")]
    OutOfDomain { what: &'static str, value: f64 },

    #[error("quadrature with {points} points cannot resolve degree {degree}")]
    InsufficientQuadrature { points: usize, degree: usize },

    #[error("nominal trajectory does not match the nominal control (first-step mismatch {0:e})")]
    StaleTrajectory(f64),

    #[error("unknown quadrature mode `{0}`")]
    UnknownQuadrature(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(&'static str),

    #[error("invalid time grid: {0}")]
    InvalidGrid(String),

    #[error("invalid momentum index {index}: must satisfy 1 <= index <= {max}")]
    InvalidMomentumIndex { index: usize, max: usize },

    #[error("quadratic program is infeasible: {0}")]
    Infeasible(String),

    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("malformed csv {path}: {message}")]
    Csv { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
