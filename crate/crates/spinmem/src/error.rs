use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{field}: {msg}")]
    OutOfRange { field: &'static str, msg: String },
    #[error("inconsistent derived quantity: {0}")]
    Inconsistent(String),
    #[error("unknown unit conversion: {0}")]
    Unit(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("non-finite state at step {step} (t = {t:e} s)")]
    NonFinite { step: usize, t: f64 },
    #[error("quadrature did not converge: {0}")]
    Quadrature(String),
    #[error("eigensolver failed: {0}")]
    Eigen(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("invalid pulse sequence: {0}")]
    Sequence(String),
    #[error("detection window: {0}")]
    Window(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("axis mismatch: {0}")]
    Axis(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn out_of_range(field: &'static str, msg: impl Into<String>) -> Error {
    Error::OutOfRange {
        field,
        msg: msg.into(),
    }
}
