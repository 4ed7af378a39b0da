use std::path::PathBuf;

use thiserror::Error;

/// A scenario that failed to parse or violates an invariant.
#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario at `{path}`: {reason}")]
    Invalid { path: String, reason: String },
    #[error("cannot parse scenario: {message} (line {line}, column {column})")]
    Parse {
        message: String,
        line: usize,
        column: usize,
    },
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Trace(#[from] TraceError),
}

impl ScenarioError {
    pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ScenarioError::Invalid {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

impl From<serde_json::Error> for ScenarioError {
    fn from(e: serde_json::Error) -> Self {
        ScenarioError::Parse {
            message: e.to_string(),
            line: e.line(),
            column: e.column(),
        }
    }
}

/// Problems with trace files: the simulator's CSV output or recorded lead
/// speed series.
#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotoneTime { line: usize },
    #[error("negative speed {speed} at line {line}")]
    NegativeSpeed { line: usize, speed: f64 },
    #[error("trace is empty")]
    Empty,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("non-finite {quantity} for vehicle {vehicle} at tick {tick}")]
    NonFinite {
        tick: usize,
        vehicle: usize,
        quantity: &'static str,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("lead speed change {0:.4} m/s is below the 0.1 m/s floor; index undefined")]
    LeadChangeTooSmall(f64),
    #[error("upstream speed excursion is zero; amplification ratio undefined")]
    ZeroUpstreamExcursion,
    #[error("vehicle {0} is not in the trace")]
    UnknownVehicle(usize),
    #[error("trace carries no {0} samples for this vehicle")]
    MissingSeries(&'static str),
    #[error("window does not overlap the trace")]
    EmptyWindow,
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("parameter path `{0}` does not address a numeric scenario field")]
    InvalidPath(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
}
