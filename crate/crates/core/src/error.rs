use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::SourceGroup;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed row at line {line}: {message}")]
    MalformedRow { line: u64, message: String },
    #[error("duplicate timestamp t = {t} in event {event_id}")]
    DuplicateTimestamp { event_id: String, t: f64 },
    #[error("unknown group label {label:?} at line {line}")]
    UnknownGroup { line: u64, label: String },
    #[error("unknown severity label {label:?} at line {line}")]
    UnknownSeverity { line: u64, label: String },
    #[error("invalid event {event_id}: {reason}")]
    InvalidEvent { event_id: String, reason: String },
    #[error("no samples of event {event_id} remain inside the window")]
    EmptyWindow { event_id: String },
    #[error("piecewise fit with {n_b} breakpoints did not converge")]
    FitDiverged { n_b: usize },
    #[error("no fit candidates to select from")]
    EmptyCandidates,
    #[error("group {0} has no valid events")]
    EmptyGroup(SourceGroup),
    #[error("degenerate speed split: {0}")]
    DegenerateSplit(String),
    #[error("zero variance in {0}")]
    ZeroVariance(String),
    #[error("insufficient data for {what}: need {needed}, got {got:.3}")]
    InsufficientData {
        what: String,
        needed: f64,
        got: f64,
    },
    #[error("no candidate distribution could be fitted: {0}")]
    AllFitsFailed(String),
    #[error(
        "rejection cap exceeded for bundle {bundle}: {accepted}/{target} accepted after {draws} draws, mostly rejected by {reason}"
    )]
    RejectionCapExceeded {
        bundle: String,
        reason: String,
        accepted: usize,
        target: usize,
        draws: usize,
    },
    #[error("empty input")]
    EmptyInput,
    #[error("bootstrap requested with zero repetitions")]
    EmptyReps,
    #[error("model build failed: {0}")]
    ModelBuildFailed(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0} artifact missing")]
    MissingArtifact(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for problems with the inputs (files, rows, configuration) as
    /// opposed to numerical failures during fitting or sampling.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_input_error(),
            Error::Io { .. }
            | Error::Csv(_)
            | Error::Json(_)
            | Error::MalformedRow { .. }
            | Error::DuplicateTimestamp { .. }
            | Error::UnknownGroup { .. }
            | Error::UnknownSeverity { .. }
            | Error::InvalidEvent { .. }
            | Error::EmptyGroup(_)
            | Error::EmptyInput
            | Error::EmptyReps
            | Error::Config(_)
            | Error::MissingArtifact(_) => true,
            _ => false,
        }
    }
}
