use std::path::PathBuf;

use thiserror::Error;

use crate::scorer::ScorerError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("document `{0}` has neither title nor body")]
    EmptyDocument(String),

    #[error("no feedback documents")]
    NoFeedbackDocuments,

    #[error("malformed passage id `{0}` (expected docid#n)")]
    MalformedPassageId(String),

    #[error("mismatched query ids: expected `{expected}`, found `{found}`")]
    MismatchedQid { expected: String, found: String },

    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    InvalidConfig(Vec<String>),

    #[error("index format error in {path}: {message}")]
    IndexFormat { path: PathBuf, message: String },

    #[error("scorer error for unit `{unit}`: {source}")]
    Unit {
        unit: String,
        #[source]
        source: ScorerError,
    },

    #[error("scorer failed; {scored} of {total} items scored before aborting: {source}")]
    ScorerAborted {
        scored: usize,
        total: usize,
        #[source]
        source: ScorerError,
    },

    #[error("no stored text for unit `{0}`")]
    MissingText(String),

    #[error(transparent)]
    Scorer(#[from] ScorerError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
