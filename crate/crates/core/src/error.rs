use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by every layer of the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("character {ch:?} at position {position} is not in the vocabulary")]
    Tokenization { ch: char, position: usize },

    #[error("token id {id} outside vocabulary of size {size}")]
    InvalidToken { id: usize, size: usize },

    #[error("degenerate distribution: every logit is -inf")]
    DegenerateDistribution,

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },

    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { step: u64, what: &'static str },

    #[error("unknown strategy id {0:?}")]
    UnknownStrategy(String),

    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json in {}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code category for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::UnknownStrategy(_) | Error::Tokenization { .. } => 2,
            Error::Io { .. } | Error::Json { .. } | Error::MissingArtifact(_) => 3,
            Error::Divergence { .. } => 4,
            Error::InvalidToken { .. } | Error::DegenerateDistribution | Error::Shape { .. } => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
