use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("image size mismatch: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    SizeMismatch {
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },

    #[error("placement rectangle has zero pixel extent")]
    DegeneratePlacement,

    #[error("bad magic bytes in {kind} file")]
    BadMagic { kind: &'static str },

    #[error("unsupported {kind} format version {found} (expected {expected})")]
    VersionMismatch {
        kind: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("truncated {kind} file: needed {needed} bytes, found {found}")]
    Truncated {
        kind: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("dimension mismatch in {kind} file: {detail}")]
    DimensionMismatch { kind: &'static str, detail: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("non-finite loss at iteration {iteration}: {detail}")]
    NonFiniteLoss { iteration: u64, detail: String },

    #[error("detector accuracy floor not reached: precision {precision:.3}, recall {recall:.3} (need {floor:.2})")]
    AccuracyFloor {
        precision: f64,
        recall: f64,
        floor: f64,
    },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("video decode error at frame {frame}: {detail}")]
    VideoDecode { frame: usize, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    /// Stable snake_case name of the variant, for machine-readable output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid_argument",
            Error::SizeMismatch { .. } => "size_mismatch",
            Error::DegeneratePlacement => "degenerate_placement",
            Error::BadMagic { .. } => "bad_magic",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::Truncated { .. } => "truncated",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::Config(_) => "config",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::AccuracyFloor { .. } => "accuracy_floor",
            Error::Dataset(_) => "dataset",
            Error::VideoDecode { .. } => "video_decode",
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Json { .. } => "json",
        }
    }

    /// File the error concerns, when there is one.
    pub fn path(&self) -> Option<&std::path::Path> {
        match self {
            Error::Io { path, .. } | Error::Image { path, .. } | Error::Json { path, .. } => Some(path),
            _ => None,
        }
    }

    /// Source frame index for decode failures.
    pub fn frame(&self) -> Option<usize> {
        match self {
            Error::VideoDecode { frame, .. } => Some(*frame),
            _ => None,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }
}
