//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

/// Errors produced by the sensing pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 8],
        found: [u8; 8],
    },

    #[error("unknown dtype code {code} in {path}")]
    UnknownDtype { path: PathBuf, code: u32 },

    #[error("truncated tensor payload in {path}: expected {expected} bytes, found {found}")]
    TruncatedPayload {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("trailing bytes after tensor payload in {path}: {extra} extra bytes")]
    TrailingBytes { path: PathBuf, extra: u64 },

    #[error("invalid tensor dims {dims:?}: {reason}")]
    InvalidDims { dims: Vec<u64>, reason: String },

    #[error("dimension mismatch: {context} (left {left:?}, right {right:?})")]
    DimMismatch {
        context: String,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("zero-magnitude reference sample at subcarrier {row}, symbol {col}")]
    ZeroReferenceSample { row: usize, col: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("scene out of bounds: {0}")]
    SceneOutOfBounds(String),

    #[error("empty calibration set")]
    EmptyCalibration,

    #[error("feature channel {channel} has zero variance")]
    ZeroVarianceChannel { channel: usize },

    #[error("class index {index} out of range for head with {classes} classes")]
    ClassOutOfRange { index: usize, classes: usize },

    #[error("manifest parse error at {path}:{line}: {reason}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("weather csv error at {path}:{line}: {reason}")]
    WeatherCsv {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("empty weather csv: {0}")]
    EmptyWeatherCsv(PathBuf),

    #[error("no calendar day available before day {target_day}")]
    NoPriorDay { target_day: i64 },

    #[error("pool too small: need {need} samples per batch from the {pool} pool, have {have}")]
    PoolTooSmall {
        pool: String,
        need: usize,
        have: usize,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
