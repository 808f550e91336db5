use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Ingest { line: usize, message: String },

    #[error("input file {0} contains no reviews")]
    EmptyInput(PathBuf),

    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },

    #[error("unsupported {what} version {found}, expected {expected}")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no embedding for sentence {0}")]
    MissingEmbedding(String),

    #[error("unknown {kind} id {id}")]
    UnknownId { kind: &'static str, id: String },

    #[error("entity {0} has no indexed sentences")]
    EmptyEntity(String),

    #[error("inverse baseline popularity is undefined: smoothing is zero and the subpath occurs nowhere")]
    ZeroBaseline,

    #[error("{0}")]
    Precondition(String),

    #[error("entailment request failed for ({premise}, {hypothesis}) after {attempts} attempts: {message}")]
    Entailment {
        premise: String,
        hypothesis: String,
        attempts: usize,
        message: String,
    },

    #[error("{service} request failed after {attempts} attempts: {message}")]
    Transport {
        service: &'static str,
        attempts: usize,
        message: String,
    },

    #[error("stage `{stage}` cannot run: {reason}; rerun `{rerun}` first")]
    Stage {
        stage: &'static str,
        reason: String,
        rerun: &'static str,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, message: impl Into<String>) -> Self {
        Error::Format {
            what,
            message: message.into(),
        }
    }
}
