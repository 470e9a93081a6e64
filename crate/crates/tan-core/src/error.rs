use std::path::PathBuf;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, TanError>;

#[derive(Debug, thiserror::Error)]
pub enum TanError {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("autograd: {0}")]
    Autograd(String),

    #[error("checkpoint {path}: bad magic bytes {found:?}")]
    CheckpointMagic { path: PathBuf, found: Vec<u8> },

    #[error("checkpoint {path}: unsupported version {found}")]
    CheckpointVersion { path: PathBuf, found: u32 },

    #[error("checkpoint {path}: truncated or corrupt ({detail})")]
    CheckpointTruncated { path: PathBuf, detail: String },

    #[error("checkpoint holds parameters unknown to the model: {names:?}")]
    CheckpointUnknownParams { names: Vec<String> },

    #[error("checkpoint is missing model parameters: {names:?}")]
    CheckpointMissingParams { names: Vec<String> },

    #[error("checkpoint shape conflict for '{name}': model {model:?}, file {file:?}")]
    CheckpointShapeConflict {
        name: String,
        model: Vec<usize>,
        file: Vec<usize>,
    },

    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training aborted: loss is not finite at epoch {epoch}, clip '{clip}' (lr={lr})")]
    NanLoss { epoch: usize, clip: String, lr: f32 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl TanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        TanError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        TanError::Shape {
            op,
            detail: detail.into(),
        }
    }
}
