use thiserror::Error;

/// Failures while reading an event log.
#[derive(Debug, Error)]
pub enum LogError {
    #[error("malformed XML at line {line}, column {column}: {message}")]
    Xml {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("event {event} of trace {trace} has no concept:name attribute")]
    MissingName { trace: usize, event: usize },
    #[error("invalid CSV header: {0}")]
    Header(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
    #[error("empty activity label in trace {trace}")]
    EmptyLabel { trace: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Caller broke the add/remove pairing of a concurrency state.
#[derive(Debug, Error, PartialEq, Eq)]
#[error("directly-precedes count for ({from}, {to}) would drop below zero")]
pub struct InvariantViolation {
    pub from: String,
    pub to: String,
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    /// Fewer than two populated categories, or an empty column.
    #[error("chi-square test not applicable: {0}")]
    Inapplicable(&'static str),
    #[error("expected count of category {index} is not positive")]
    DegenerateCategory { index: usize },
    #[error("vector lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("no node at path {0:?}")]
    InvalidPath(Vec<usize>),
    #[error("edit {edit} cannot target a {kind} node")]
    WrongKind { edit: &'static str, kind: &'static str },
    #[error("invalid model: {0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("invalid drift spec: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
