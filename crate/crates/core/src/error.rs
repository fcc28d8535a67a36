use std::path::PathBuf;

use crate::Task;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema violation in dialogue `{dialogue}` at `{field}`: {message}")]
    Schema {
        dialogue: String,
        field: String,
        message: String,
    },
    #[error("corpus task {found} does not match expected task {expected}")]
    TaskMismatch { expected: Task, found: Task },
    #[error("dialogue `{dialogue}` references unknown {kind} `{domain}/{name}`")]
    OntologyReference {
        dialogue: String,
        kind: &'static str,
        domain: String,
        name: String,
    },
    #[error("dialogue `{dialogue}` has no {task} annotation{}", turn.map(|t| format!(" at turn {t}")).unwrap_or_default())]
    MissingAnnotation {
        dialogue: String,
        task: Task,
        turn: Option<usize>,
    },
    #[error("unknown slot `{slot}` of domain `{domain}`")]
    UnknownSlot { domain: String, slot: String },
    #[error("unknown domain `{0}`")]
    UnknownDomain(String),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("output has no recognised task tag: `{0}`")]
    UnknownTag(String),
    #[error("sequence of length {len} exceeds max_len {max_len}")]
    LengthOverflow { len: usize, max_len: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("{task} is not active in stage {stage} of the schedule")]
    ScheduleViolation { task: Task, stage: usize },
    #[error("roster does not fit strategy: {0}")]
    Roster(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
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

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Errors caused by bad input data or arguments, as opposed to failures
    /// during computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::NonFinite(_) | Error::Checkpoint(_) | Error::Io { .. }
        )
    }
}
