use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("degenerate timeline: {0}")]
    DegenerateTimeline(String),

    #[error("frame index {index} out of range for {frames} frames")]
    IndexOutOfRange { index: f64, frames: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("configuration does not match data: {0}")]
    ConfigMismatch(String),

    #[error("mask hides every pixel")]
    EmptyMask,

    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("non-finite value in input tensor")]
    NonFiniteInput,

    #[error("image too small for metric: {0}")]
    TooSmall(String),

    #[error("corrupt entropy stream: {0}")]
    CorruptStream(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u16, expected: u16 },

    #[error("no frame files found in {0}")]
    EmptyDirectory(PathBuf),

    #[error("inconsistent resolution in {path}: expected {expected:?}, found {found:?}")]
    InconsistentResolution {
        path: PathBuf,
        expected: (u32, u32),
        found: (u32, u32),
    },

    #[error("cannot read {path}: {reason}")]
    UnreadableFile { path: PathBuf, reason: String },

    #[error("mask does not fit the frame: {0}")]
    MaskTooLarge(String),

    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
