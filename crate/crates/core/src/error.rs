use thiserror::Error;

/// Errors raised anywhere in the navigation stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no transform from frame `{from}` into `{to}`")]
    MissingFrame { from: String, to: String },
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("point ({x:.3}, {y:.3}) lies outside the grid")]
    OutOfBounds { x: f64, y: f64 },
    #[error("operation requires a {expected} costmap")]
    KindMismatch { expected: &'static str },
    #[error("degenerate correspondence: {0}")]
    DegenerateCorrespondence(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
    #[error("invalid planner state: {0}")]
    InvalidState(String),
    #[error("global path does not intersect the local window")]
    WindowMismatch,
    #[error("optimization failed: {0}")]
    OptimizationFailure(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
