use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
///
/// The CLI maps variants onto exit codes: infeasible budget -> 2,
/// configuration problems -> 3, training divergence -> 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },

    #[error("parameter {index} has no gradient; run backward before stepping")]
    MissingGradient { index: usize },

    #[error("quantizer scale must be positive, got {scale}")]
    NonPositiveScale { scale: f64 },

    #[error("bit-width options must be a strictly increasing list of integers >= 2, got {bits:?}")]
    InvalidBitOptions { bits: Vec<u32> },

    #[error("{what}: {detail}")]
    InvalidArgument { what: &'static str, detail: String },

    #[error("layer sets do not match: {detail}")]
    LayerSetMismatch { detail: String },

    #[error("importance value for layer {layer} is negative ({value}); scale clamping failed upstream")]
    NegativeImportance { layer: usize, value: f64 },

    #[error("budget must carry at least one limit (bitops or size)")]
    EmptyBudget,

    #[error(
        "budget infeasible: minimal achievable bitops {min_bitops} and size {min_size_bits} bits \
         against limits bitops {bitops_limit:?}, size {size_limit:?}"
    )]
    InfeasibleBudget {
        min_bitops: u64,
        min_size_bits: u64,
        bitops_limit: Option<u64>,
        size_limit: Option<u64>,
    },

    #[error("instance too large for exhaustive enumeration: {assignments:.3e} assignments > {limit:.1e}")]
    InstanceTooLarge { assignments: f64, limit: f64 },

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    IdxBadMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated IDX payload: expected {expected} bytes, found {found}")]
    IdxTruncated { path: PathBuf, expected: usize, found: usize },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    IdxCountMismatch { images: usize, labels: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("artifact {path} does not match its recorded digest")]
    DigestMismatch { path: PathBuf },

    #[error("malformed {what} file {path}: {detail}")]
    MalformedArtifact { what: &'static str, path: PathBuf, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wrap an error with the pipeline stage it occurred in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage { stage, source: Box::new(self) }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
