use std::path::PathBuf;

use thiserror::Error;

/// Token-kind names used in grammar diagnostics.
pub type ExpectedKinds = Vec<String>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate 6D rotation: {0}")]
    Degenerate6d(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("sequence too short: {len} frames, need at least {min}")]
    TooShort { len: usize, min: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid token: {0}")]
    InvalidToken(String),

    #[error("training diverged at step {step}: {detail}")]
    TrainingDiverged { step: u64, detail: String },

    #[error("section {section} contains a {found} token (id {id})")]
    SectionKind {
        section: &'static str,
        found: String,
        id: u32,
    },

    #[error("grammar violation at position {position}: expected one of {expected:?}, found {found}")]
    GrammarViolation {
        position: usize,
        expected: ExpectedKinds,
        found: String,
    },

    #[error("token id {id} outside vocabulary of size {vocab_size}")]
    InvalidId { id: u32, vocab_size: u32 },

    #[error("clip {0} has zero duration")]
    EmptyClip(String),

    #[error("segment pool has {available} segments, {requested} requested")]
    InsufficientPool { requested: usize, available: usize },

    #[error("example is missing the {0} modality")]
    ModalityMissing(&'static str),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("sequence of {len} tokens exceeds context length {context}")]
    ContextOverflow { len: usize, context: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("checkpoint format error in {path}: {detail}")]
    CheckpointFormat { path: PathBuf, detail: String },

    #[error("decoder automaton produced an empty mask in state {0}")]
    AutomatonBug(String),

    #[error("generation ran out of context after {} tokens", partial.len())]
    GenerationTruncated { partial: Vec<u32> },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),

    #[error("corrupt corpus: {0}")]
    CorruptCorpus(String),

    #[error("input missing: {}", .0.display())]
    InputMissing(PathBuf),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
