use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty dataset split: {0}")]
    EmptyData(String),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },
    #[error("label {label} outside of [0, {classes})")]
    Label { label: usize, classes: usize },
    #[error("invalid architecture descriptor: {0}")]
    Descriptor(String),
    #[error("output expansion to {requested} classes is a no-op (network has {current})")]
    NoOp { requested: usize, current: usize },
    #[error("new width {requested} must exceed current width {current}")]
    Width { requested: usize, current: usize },
    #[error("layer site {0} is not eligible for this morphism")]
    Site(usize),
    #[error("empty batch: {0}")]
    EmptyBatch(&'static str),
    #[error("accuracy map is missing class {0}")]
    Coverage(usize),
    #[error("malformed data file: {0}")]
    Format(String),
    #[error("arrival order is not a permutation of the class set: {0}")]
    Order(String),
    #[error("cannot merge runs: {0}")]
    Merge(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
