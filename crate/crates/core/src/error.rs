use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("bad magic number: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { expected: u32, found: u32 },

    #[error("truncated input: header promises {expected} bytes, found {actual}")]
    Truncated { expected: usize, actual: usize },

    #[error("label {value} at position {index} is outside 0..=9")]
    LabelOutOfRange { index: usize, value: u8 },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite gradient encountered")]
    NonFiniteGradient,

    #[error("too few points for clustering: {points} points, {k} clusters requested")]
    TooFewPoints { points: usize, k: usize },

    #[error("index {index} out of range for {len} instances")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("inconsistent ensemble: {0}")]
    InconsistentEnsemble(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed artifact: {0}")]
    Artifact(String),

    #[error("artifact kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: &'static str, found: String },

    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Attaches a file path to an error raised while decoding that file.
    pub fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::Io { .. } | Error::File { .. }) => e,
            e => Error::File { path: path.into(), source: Box::new(e) },
        }
    }

    /// The innermost error, with any file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.root(),
            e => e,
        }
    }

    /// True when the error comes from bad input data rather than a broken
    /// internal invariant.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self.root(),
            Error::NonFiniteGradient | Error::InconsistentEnsemble(_)
        )
    }
}
