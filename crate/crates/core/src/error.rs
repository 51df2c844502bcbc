use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("waveform has {len} samples, shorter than one {window}-sample window")]
    WaveformTooShort { len: usize, window: usize },
    #[error("invalid window: win_ms = {win_ms} must exceed overlap_ms = {overlap_ms} >= 0")]
    InvalidWindow { win_ms: f64, overlap_ms: f64 },
    #[error("class {0} has no training events")]
    EmptyClass(usize),
    #[error("split leaves one side empty")]
    EmptySide,
    #[error("no test in the pool separates the node data")]
    NoValidSplit,
    #[error("matcher training data contains a single class")]
    SingleClass,
    #[error("{events} events cannot be split into {folds} folds")]
    TooFewEvents { events: usize, folds: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("negative entry {value} at index {index}")]
    NegativeEntry { index: usize, value: f64 },
    #[error("kernel requires channel `{0}` which is missing")]
    MissingChannel(&'static str),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("SMO did not converge within {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("k-means needs {k} distinct points, found {distinct}")]
    TooFewPoints { distinct: usize, k: usize },
    #[error("event has no segments")]
    EmptyEvent,
    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("row {row}: onset {onset} s is not before offset {offset} s")]
    InvalidInterval { row: usize, onset: f64, offset: f64 },
    #[error("bundle format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("wav: {0}")]
    Wav(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the name of the pipeline stage that produced it.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Process exit code: 1 usage, 2 data, 3 convergence/training.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidConfig(_) | Error::InvalidWindow { .. } => 1,
            Error::NoConvergence { .. }
            | Error::SingleClass
            | Error::EmptyClass(_)
            | Error::TooFewEvents { .. }
            | Error::TooFewPoints { .. }
            | Error::TooFewSamples { .. } => 3,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

impl From<hound::Error> for Error {
    fn from(e: hound::Error) -> Self {
        match e {
            hound::Error::IoError(io) => Error::Io(io),
            other => Error::Wav(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::CorruptBundle(e.to_string())
    }
}
