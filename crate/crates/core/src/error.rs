use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("record `{id}` is invalid: {}", violations.join("; "))]
    InvalidRecord { id: String, violations: Vec<String> },

    #[error("duplicate record id `{0}`")]
    DuplicateId(String),

    #[error("record `{id}` references unknown source `{source_id}`")]
    UnresolvedSource { id: String, source_id: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("token id {token} is outside the vocabulary of size {vocab_size}")]
    OutOfVocabulary { token: u32, vocab_size: usize },

    #[error("empty batch")]
    EmptyBatch,

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
