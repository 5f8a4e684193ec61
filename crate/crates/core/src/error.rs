use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {got} samples, need at least {need}")]
    InputTooShort { got: usize, need: usize },

    #[error("malformed spectrogram: {0}")]
    MalformedSpectrogram(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("utterance too short for FLE blocks: {frames} frames, block length {block}")]
    TooFewFrames { frames: usize, block: usize },

    #[error("cannot set SNR: {0}")]
    CannotSetSnr(String),

    #[error("wav {path}: {field}: {detail}")]
    Wav {
        path: String,
        field: &'static str,
        detail: String,
    },

    #[error("checkpoint {path}: {detail}")]
    Checkpoint { path: String, detail: String },

    #[error("manifest {path}, line {line}: {detail}")]
    Manifest {
        path: String,
        line: usize,
        detail: String,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("oracle: {0}")]
    Oracle(String),

    #[error("training: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
