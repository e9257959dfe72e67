use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("empty gallery")]
    EmptyGallery,

    #[error("unlabeled track in gallery")]
    UnlabeledTrack,

    #[error("empty probe track")]
    EmptyProbe,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no forest available")]
    NoForest,

    #[error("no points for camera {camera} ({kind})")]
    NoPoints { camera: u32, kind: &'static str },

    #[error("degenerate fit; retain previous window")]
    DegenerateFit,

    #[error("no ground truth")]
    NoGroundTruth,

    #[error("{path}:{line}: {reason}")]
    Parse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source}")]
    Json {
        #[from]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Error {
    Error::Invalid {
        what,
        reason: reason.into(),
    }
}
