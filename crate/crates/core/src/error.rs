use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KgcError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },

    #[error("missing vectors for {} name(s): {}", .0.len(), .0.join(", "))]
    Coverage(Vec<String>),

    #[error("{0}")]
    Domain(String),

    #[error("negative sampling gave up after {retries} retries for triple ({head}, {relation}, {tail})")]
    SamplingExhausted {
        retries: usize,
        head: usize,
        relation: usize,
        tail: usize,
    },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl KgcError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        KgcError::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        KgcError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, KgcError>;
