use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unsupported quadrature order {order} (supported: 1..={max})")]
    UnsupportedOrder { order: usize, max: usize },

    #[error("projection failed: non-finite value at node {node:?}")]
    Projection { node: Vec<f64> },

    #[error("numerical blow-up at t = {time}: state {state:?}")]
    NumericalBlowup { time: f64, state: Vec<f64> },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("noise mismatch: {0}")]
    NoiseMismatch(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
