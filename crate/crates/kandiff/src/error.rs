use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {op} got {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    Contract { op: &'static str, msg: String },

    #[error("spatial dims {h}x{w} not divisible by {divisor} (network depth {depth})")]
    Indivisible {
        h: usize,
        w: usize,
        divisor: usize,
        depth: usize,
    },

    #[error("timestep {t} out of range [1, {max}]")]
    TimestepOutOfRange { t: usize, max: usize },

    #[error("degenerate spline grid: t_min {t_min} >= t_max {t_max}")]
    DegenerateGrid { t_min: f64, t_max: f64 },

    #[error("file not found: {0:?}")]
    MissingFile(PathBuf),

    #[error("unsupported color type in {path:?}: {detail}")]
    UnsupportedColorType { path: PathBuf, detail: String },

    #[error("corrupt image stream {path:?}: {source}")]
    CorruptImage {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("image {path:?} ({h}x{w}) smaller than requested patch {patch}; resize the dataset or lower the patch size")]
    PatchTooLarge {
        path: PathBuf,
        h: usize,
        w: usize,
        patch: usize,
    },

    #[error("checkpoint parameter mismatch:\n{diff}")]
    CheckpointMismatch { diff: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
