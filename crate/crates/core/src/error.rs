use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("file not found: {0}")]
    NotFound(PathBuf),

    #[error("unsupported slide format: {0}")]
    UnsupportedFormat(String),

    #[error("inconsistent pyramid: {0}")]
    InconsistentPyramid(String),

    #[error("image decoding failed: {0}")]
    Decode(String),

    #[error("image encoding failed: {0}")]
    Encode(String),

    #[error("invalid level {level} (slide has {count} levels)")]
    InvalidLevel { level: usize, count: usize },

    #[error("zero-area region request ({width}x{height})")]
    ZeroArea { width: u32, height: u32 },

    #[error("malformed geometry: {0}")]
    Geometry(String),

    #[error("unknown label {found:?}; allowed labels are benign, malignant, normal")]
    UnknownLabel { found: String },

    #[error("target magnification {requested}x is outside (0, {base}x]")]
    Magnification { requested: f64, base: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("mask mismatch: {0}")]
    MaskMismatch(String),

    #[error("extent mismatch: expected {expected:?}, got {found:?}")]
    ExtentMismatch { expected: (u32, u32), found: (u32, u32) },

    #[error("record out of bounds: {0}")]
    OutOfBounds(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("zero variance in channel {0}")]
    ZeroVariance(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("model error: {0}")]
    Model(String),

    #[error("non-finite model output at patch {0}")]
    NonFinite(usize),

    #[error("probability vector is not normalized: {0}")]
    NotNormalized(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("duplicate map cell (row {row}, col {col})")]
    DuplicateCell { row: usize, col: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Whether the error stems from bad user input (configuration, arguments,
    /// missing inputs) rather than a failure while processing valid input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidArgument(_)
                | Error::NotFound(_)
                | Error::UnknownLabel { .. }
                | Error::Magnification { .. }
        )
    }
}
