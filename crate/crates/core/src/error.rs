use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("duplicate {kind} id `{id}`")]
    Duplicate { kind: &'static str, id: String },

    #[error("unknown {kind} `{id}`")]
    Lookup { kind: &'static str, id: String },

    #[error("time {t} s outside horizon [0, {horizon}) s")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("FIFO violated on path {path} departing in interval {interval}: link {link_pos} arrival {later} s precedes {earlier} s")]
    Fifo {
        path: usize,
        interval: usize,
        link_pos: usize,
        earlier: f64,
        later: f64,
    },

    #[error("assembly error: {0}")]
    Assembly(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("solver diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("active-set solver stopped after {iterations} iterations: {reason}")]
    NotConverged {
        iterations: usize,
        reason: String,
        best: Vec<f64>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("stage `{stage}` failed{}: {source}", day.as_ref().map(|d| format!(" on {d}")).unwrap_or_default())]
    Stage {
        stage: &'static str,
        day: Option<String>,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn in_stage(self, stage: &'static str, day: Option<String>) -> Error {
        Error::Stage {
            stage,
            day,
            source: Box::new(self),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Error {
        Error::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}
