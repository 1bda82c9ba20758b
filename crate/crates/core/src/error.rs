use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the refinement engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coordinate ({x}, {y}, {z}) is outside a {nx}x{ny}x{nz} grid")]
    OutOfBounds {
        x: usize,
        y: usize,
        z: usize,
        nx: usize,
        ny: usize,
        nz: usize,
    },

    #[error("voxel index {index} is outside a grid of {len} voxels")]
    IndexOutOfBounds { index: usize, len: usize },

    #[error("dimension mismatch: {0}")]
    DimsMismatch(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("payload truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid of {voxels} voxels is too large for the exact solver (limit {limit})")]
    GridTooLarge { voxels: usize, limit: usize },

    #[error("nothing to learn: no scribbles and no segmentation labels survived pruning")]
    NothingToLearn,

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("{stage} stage: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// The underlying error with any stage tags peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |e| Error::Stage {
            stage,
            source: Box::new(e),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
