use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("length error: {0}")]
    Length(String),

    #[error("all keys are masked for query row {row}")]
    AllKeysMasked { row: usize },

    #[error(
        "infeasible CTC target: {labels} labels with {repeats} adjacent repeats need {needed} frames, got {frames}"
    )]
    Infeasible {
        labels: usize,
        repeats: usize,
        needed: usize,
        frames: usize,
    },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("unknown preset `{0}` (expected one of: tiny, small, B, L)")]
    UnknownPreset(String),

    #[error("cannot parse config triplet `{input}` at position {position}: {reason}")]
    Triplet {
        input: String,
        position: usize,
        reason: String,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training aborted at step {step}: {reason}")]
    Training { step: usize, reason: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("audio format: {0}")]
    Audio(String),

    #[error("{path}: {cause}")]
    Path { path: String, cause: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<T> {
    Err(Error::Shape {
        op,
        lhs: lhs.to_vec(),
        rhs: rhs.to_vec(),
    })
}
