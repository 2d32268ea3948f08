use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A candidate that was not scored, with the reason it was dropped.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Excluded {
    pub candidate: String,
    pub reason: String,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("backend does not support {0}")]
    Capability(&'static str),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("multiword candidate {0:?}")]
    Multiword(String),

    #[error("internal consistency error: {0}")]
    Consistency(String),

    #[error("instance {id}: every candidate was excluded")]
    AllCandidatesExcluded { id: String, excluded: Vec<Excluded> },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("instance {id}: {message}")]
    Validation { id: String, message: String },

    #[error("conversion error: {0}")]
    Conversion(String),

    #[error("aggregation error: {0}")]
    Aggregation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
