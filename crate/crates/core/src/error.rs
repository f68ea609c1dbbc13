use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed {format} data: {detail}")]
    Format { format: &'static str, detail: String },

    #[error("degenerate ensemble: {0}")]
    Degenerate(String),

    #[error("conditioning failed after {retries} retries")]
    Conditioning { retries: usize },

    #[error("non-finite loss at iteration {iteration} (content {content}, style {style}, hard {hard})")]
    NonFiniteLoss {
        iteration: usize,
        content: f64,
        style: f64,
        hard: f64,
    },

    #[error("linear solve failed at step {step}: {detail}")]
    LinearSolve { step: usize, detail: String },

    #[error("time step underflow at t = {time} days (dt = {dt})")]
    StepUnderflow { time: f64, dt: f64 },

    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::InvalidArgument(detail.into())
    }

    pub(crate) fn format(format: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            format,
            detail: detail.into(),
        }
    }
}
