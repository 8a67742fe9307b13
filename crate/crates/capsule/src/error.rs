//! Crate-wide error type and exit-code mapping.

use std::path::PathBuf;
use thiserror::Error;

/// All fallible operations in this crate return [`Result`].
pub type Result<T> = std::result::Result<T, CapsuleError>;

#[derive(Debug, Error)]
pub enum CapsuleError {
    /// Invalid run configuration, catalog, or command-line usage.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset ingestion, manifest, or augmentation data problems.
    #[error("data error: {0}")]
    Data(String),

    /// A class name that is not part of the active catalog or label space.
    #[error("unknown class {name:?}; valid classes: {valid:?}")]
    UnknownClass { name: String, valid: Vec<String> },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    /// Model construction or forward-pass contract violations.
    #[error("model error: {0}")]
    Model(String),

    /// Training aborted (non-finite loss, empty stage, ...).
    #[error("training aborted at stage {stage}, epoch {epoch}: {msg}")]
    Training {
        stage: usize,
        epoch: usize,
        msg: String,
    },

    /// Heatmap extraction problems (bad layer selection, missing class).
    #[error("explain error: {0}")]
    Explain(String),

    #[error("metrics error: {0}")]
    Metrics(String),
}

impl CapsuleError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CapsuleError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        CapsuleError::Image {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 0 success, 2 config, 3 data, 4 training abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            CapsuleError::Config(_) => 2,
            CapsuleError::Data(_)
            | CapsuleError::UnknownClass { .. }
            | CapsuleError::Io { .. }
            | CapsuleError::Image { .. } => 3,
            CapsuleError::Training { .. } => 4,
            CapsuleError::Model(_) | CapsuleError::Explain(_) | CapsuleError::Metrics(_) => 3,
        }
    }
}
