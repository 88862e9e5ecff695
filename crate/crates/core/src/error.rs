use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {axis} (expected {expected}, got {actual})")]
    Dimension {
        op: &'static str,
        axis: String,
        expected: usize,
        actual: usize,
    },

    #[error("window of {window} is longer than the sequence ({len}); pad the input first")]
    WindowTooLong { window: usize, len: usize },

    #[error("max-over-time pooling on an empty feature map")]
    EmptyFeatureMap,

    #[error("empty sentence")]
    EmptySentence,

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid vocabulary: {0}")]
    Vocab(String),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("batch does not match model variant: {0}")]
    Contract(String),

    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    #[error("score {0} outside the range [1, 5]")]
    ScoreRange(f64),

    #[error("evaluation protocol violated: {0}")]
    Protocol(String),

    #[error("zero-norm vector has no cosine similarity")]
    ZeroNorm,

    #[error("unsupported checkpoint version {found} (this build reads {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("corrupt file: {0}")]
    Integrity(String),

    #[error("tensor `{name}` has shape {found:?}, model expects {expected:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn dim_err(op: &'static str, axis: impl Into<String>, expected: usize, actual: usize) -> Error {
    Error::Dimension {
        op,
        axis: axis.into(),
        expected,
        actual,
    }
}
