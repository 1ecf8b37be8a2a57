use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch in {stage}: {detail}")]
    Shape { stage: &'static str, detail: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("unsupported beamwidth {width} deg (supported: {supported:?})")]
    UnsupportedWidth { width: f64, supported: Vec<f64> },

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn shape(stage: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            stage,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numeric(_) => 3,
            Error::Io { .. } | Error::Wav { .. } => 1,
            _ => 2,
        }
    }
}
