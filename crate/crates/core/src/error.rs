use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: u32, size: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("unknown speaker {speaker} (model has {known:?})")]
    UnknownSpeaker { speaker: u32, known: Vec<u32> },

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("corrupted file: {0}")]
    Corruption(String),

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("measurement quality: {0}")]
    Measurement(String),

    #[error("parallelism detected: {0}")]
    Parallelism(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier used in machine-parseable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::Vocabulary { .. } => "vocabulary",
            Error::Contract(_) => "contract",
            Error::UnknownSpeaker { .. } => "unknown-speaker",
            Error::Degenerate(_) => "degenerate-input",
            Error::Config(_) => "config",
            Error::Format(_) => "format",
            Error::Corruption(_) => "corruption",
            Error::Incompatible(_) => "incompatible",
            Error::Measurement(_) => "measurement",
            Error::Parallelism(_) => "parallelism",
            Error::Io { .. } => "io",
        }
    }
}
