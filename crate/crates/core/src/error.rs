use thiserror::Error;

use crate::optimizer::TraceRecord;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite function value at quadrature node {index} (x = {node})")]
    Evaluation { index: usize, node: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("optimization failed at iteration {iteration}: {message}")]
    Optimization {
        iteration: usize,
        message: String,
        trace: Vec<TraceRecord>,
    },

    #[error("procedure error: {0}")]
    Procedure(String),

    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}

pub(crate) fn shape<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Shape(msg.into()))
}
