use std::path::PathBuf;

/// Errors produced anywhere in the positioning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate direction: source and target positions coincide")]
    DegenerateDirection,

    #[error("invalid config: {0}")]
    Config(String),

    #[error("dimension mismatch: {left} is {left_dims:?}, {right} is {right_dims:?}")]
    DimensionMismatch {
        left: &'static str,
        left_dims: Vec<usize>,
        right: &'static str,
        right_dims: Vec<usize>,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("manifest missing in {}", .0.display())]
    ManifestMissing(PathBuf),

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("sample count mismatch in {file}: expected {expected} bytes, found {found}")]
    SampleCountMismatch {
        file: &'static str,
        expected: u64,
        found: u64,
    },

    #[error("format version mismatch: expected {expected}, found {found}")]
    VersionMismatch { expected: String, found: String },

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
