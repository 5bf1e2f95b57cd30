//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller violated a precondition (id out of range, empty region,
    /// fraction too small for one author, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A loss or training step produced a non-finite value.
    #[error("numeric error in {what}{}", step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    Numeric { what: String, step: Option<usize> },

    /// Corpus generation could not satisfy its invariants (pool exhaustion).
    #[error("corpus generation failed: {0}")]
    Generation(String),

    /// An experiment or loss configuration is inconsistent.
    #[error("config error: {0}")]
    Config(String),

    /// A metric backend (embedder / NLI judge) failed; the run is incomplete.
    #[error("metric backend failed: {0}")]
    Metric(String),

    /// Remote backend unreachable or returned an error status after retries.
    #[error("backend error: {0}")]
    Backend(String),

    /// Remote backend answered with a body we cannot interpret.
    #[error("protocol error: {0}")]
    Protocol(String),

    /// The hallucination judge replied with neither YES nor NO.
    #[error("judge response contained neither YES nor NO: {0:?}")]
    JudgeParse(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn numeric(what: impl Into<String>, step: Option<usize>) -> Self {
        Error::Numeric { what: what.into(), step }
    }
}
