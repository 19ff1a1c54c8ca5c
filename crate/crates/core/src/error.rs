use std::path::Path;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A malformed line in an input file (dataset, embeddings, features, ...).
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// I/O failure, annotated with the path involved.
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A contract violation: bad argument, inconsistent configuration,
    /// missing precondition.
    #[error("{0}")]
    Invalid(String),

    /// Tensor shape disagreement in a public operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Numerical failure (non-finite loss or gradient).
    #[error("non-finite {what} in {context}")]
    NonFinite { what: &'static str, context: String },
}

impl Error {
    pub fn parse(path: &Path, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.display().to_string(),
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
