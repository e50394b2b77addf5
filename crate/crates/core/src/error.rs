use thiserror::Error;

#[derive(Debug, Error)]
pub enum NdfError {
    #[error(transparent)]
    Autodiff(#[from] ndf_autodiff::AutodiffError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("forest has no trees")]
    EmptyForest,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("node {node} is not a splitting node of a depth-{depth} tree")]
    NotASplit { node: usize, depth: usize },
    #[error("non-finite {what} at epoch {epoch}, batch {batch}")]
    NonFinite {
        what: &'static str,
        epoch: usize,
        batch: usize,
    },
    #[error("idx parse error at byte {offset}: {message}")]
    Idx { offset: usize, message: String },
    #[error("dataset cache error at byte {offset}: {message}")]
    Cache { offset: usize, message: String },
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("unsupported model format_version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },
    #[error("model checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error("cannot export: {0}")]
    Export(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl NdfError {
    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, NdfError::NonFinite { .. })
    }
}

pub type Result<T> = std::result::Result<T, NdfError>;
