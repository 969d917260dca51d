use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the training pipeline.
#[derive(Debug, Error)]
pub enum NatError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Annotation { path: PathBuf, message: String },
    #[error("no annotation files found in {0}")]
    NoAnnotations(PathBuf),
    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("spans overlap: {first} and {second}")]
    OverlappingSpans { first: String, second: String },
    #[error("span {span} out of range for {n_tokens} tokens")]
    SpanOutOfRange { span: String, n_tokens: usize },
    #[error("unknown entity type `{0}`")]
    UnknownEntityType(String),
    #[error("document {id} has {len} tokens, above the maximum sequence length {max}; split it into chunks")]
    SequenceTooLong { id: String, len: usize, max: usize },
    #[error("non-finite loss on document {0}")]
    NonFiniteLoss(String),
    #[error("non-finite input: {0}")]
    NonFinite(String),
    #[error("empty parameter tensor `{0}`")]
    EmptyTensor(String),
    #[error("document {0} has no gold spans")]
    Unlabeled(String),
    #[error("corpus is empty: {0}")]
    EmptyCorpus(String),
    #[error("partition sizes sum to {requested} but the corpus has {available} documents")]
    OverSubscribed { requested: usize, available: usize },
    #[error("document id mismatch: {0}")]
    IdMismatch(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T, E = NatError> = std::result::Result<T, E>;

impl NatError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NatError::Io {
            path: path.into(),
            source,
        }
    }
}
