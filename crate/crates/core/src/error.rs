use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("precondition violated in {op}: {detail}")]
    Precondition { op: &'static str, detail: String },

    #[error("invalid architecture at stage {stage}: {detail}")]
    Validation { stage: usize, detail: String },

    #[error("parse error at line {line}: {detail}")]
    Parse { line: usize, detail: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}

pub(crate) fn precondition<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Precondition {
        op,
        detail: detail.into(),
    })
}
