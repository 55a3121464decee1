use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed storyline: {0}")]
    MalformedStoryline(String),

    #[error("no event found in sentence {0:?}")]
    NoEventFound(String),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("consensus requires at least one vote")]
    EmptyVotes,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("empty input")]
    EmptyInput,

    #[error("sequence of {len} tokens exceeds max_len {max}")]
    SequenceTooLong { len: usize, max: usize },

    #[error("expected {expected} temporal prompts, got {got}")]
    PromptCount { expected: usize, got: usize },

    #[error("loss became non-finite at step {step}")]
    DivergedLoss { step: u64 },

    #[error("reward is not finite")]
    NonFiniteReward,

    #[error("correlation undefined: zero variance")]
    ZeroVariance,

    #[error("accuracy undefined: no AFTER prompts")]
    NoAfterPrompts,

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("not enough rows: {rows} (need at least {needed})")]
    NotEnoughRows { rows: usize, needed: usize },

    #[error("no perplexity scorer configured")]
    NoScorer,

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("vocabulary mismatch between checkpoints ({0} vs {1})")]
    VocabularyMismatch(String, String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
