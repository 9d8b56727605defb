use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("duplicate document id {0:?}")]
    DuplicateId(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration errors:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("oracle budget exhausted after {used} calls (limit {limit})")]
    BudgetExhausted { used: u64, limit: u64 },

    #[error("oracle transport failure (retryable: {retryable}): {message}")]
    Transport { retryable: bool, message: String },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("non-finite value in forward pass at example {index}")]
    NonFinite { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("no chunks")]
    NoChunks,

    #[error("no evidence")]
    NoEvidence,

    #[error("invariant violated: {0}")]
    Invariant(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::BudgetExhausted { .. } => 3,
            Error::Io { .. }
            | Error::Malformed { .. }
            | Error::DuplicateId(_)
            | Error::InvalidData(_)
            | Error::InvalidArgument(_)
            | Error::Transport { .. }
            | Error::DimensionMismatch { .. }
            | Error::Checkpoint(_)
            | Error::NoChunks
            | Error::NoEvidence => 4,
            Error::DegenerateEmbedding(_) | Error::NonFinite { .. } | Error::Invariant(_) => 5,
        }
    }
}
