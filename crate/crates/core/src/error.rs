//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {path} (line {line}): {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("invalid file format in {path}: {message}")]
    Format { path: String, message: String },

    #[error("schema violation in {path}: {message}")]
    Schema { path: String, message: String },

    #[error("invalid grid spec: {0}")]
    GridSpec(String),

    #[error("empty point set")]
    EmptyPointSet,

    #[error("cannot determine interior: all normals degenerate")]
    DegenerateNormals,

    #[error("point {index} lies outside the grid bounds plus truncation margin")]
    PointOutOfBounds { index: usize },

    #[error("query point outside grid interior")]
    OutsideGrid,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid manifold: {0}")]
    Manifold(String),

    #[error("motion covariance is singular")]
    SingularCovariance,

    #[error("invalid track: {0}")]
    Track(String),

    #[error("non-finite energy in {term} term at frame {frame}")]
    NonFiniteEnergy { term: &'static str, frame: usize },

    #[error("scenario error: {0}")]
    Scenario(String),

    #[error("evaluation error: {0}")]
    Eval(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True when the error stems from user-supplied input (files, schemas,
    /// parameters) rather than a runtime failure.
    pub fn is_input(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::Format { .. }
                | Error::Schema { .. }
                | Error::GridSpec(_)
                | Error::EmptyPointSet
                | Error::DimensionMismatch { .. }
                | Error::Manifold(_)
                | Error::Track(_)
                | Error::Scenario(_)
                | Error::Eval(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
