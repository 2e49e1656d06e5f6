use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("cannot write image {path}: {source}")]
    ImageWrite {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("mask must have non-zero width and height, got {width}x{height}")]
    EmptyMask { width: u32, height: u32 },

    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },

    #[error("dimension mismatch: {left:?} vs {right:?}")]
    DimensionMismatch { left: (u32, u32), right: (u32, u32) },

    #[error("sample {sample_id}: {source}")]
    Sample {
        sample_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },

    #[error("sample {0} needs at least two masks to score agreement")]
    TooFewMasks(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("value {value} at index {index} is outside the allowed range {range}")]
    OutOfRange {
        index: usize,
        value: f64,
        range: &'static str,
    },

    #[error("{0}")]
    Design(String),

    #[error("runs table {path}, row {row}, column {column}: {reason}")]
    RunsTable {
        path: PathBuf,
        row: usize,
        column: String,
        reason: String,
    },
}

impl Error {
    pub(crate) fn in_sample(self, sample_id: &str) -> Self {
        Error::Sample {
            sample_id: sample_id.to_owned(),
            source: Box::new(self),
        }
    }
}
