//! Scenario files and recorded lead-speed series.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use crate::error::{ScenarioError, TraceError};
use crate::model::{LeadProfile, Scenario};

/// Reads, resolves and validates a JSON scenario.
///
/// An `external` lead profile is loaded relative to the scenario's directory
/// and replaced by the equivalent piecewise-linear profile.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_scenario(&text, Some(base))
}

/// Parses scenario JSON. Without `base`, relative external paths resolve
/// against the working directory.
pub fn parse_scenario(text: &str, base: Option<&Path>) -> Result<Scenario, ScenarioError> {
    let mut scenario: Scenario = serde_json::from_str(text)?;
    if let LeadProfile::External { path } = &scenario.lead {
        let mut p = PathBuf::from(path);
        if p.is_relative() {
            if let Some(base) = base {
                p = base.join(p);
            }
        }
        scenario.lead = ingest_external_trace(&p)?;
    }
    scenario.validate()
}

pub fn scenario_to_json(s: &Scenario) -> String {
    // Serializing plain data with string keys cannot fail.
    serde_json::to_string_pretty(s).expect("scenario serializes")
}

/// Loads a recorded `t, v` series as a lead profile.
pub fn ingest_external_trace(path: impl AsRef<Path>) -> Result<LeadProfile, TraceError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| TraceError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_external_trace(file)
}

pub fn parse_external_trace<R: Read>(input: R) -> Result<LeadProfile, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr
        .headers()
        .map_err(|e| TraceError::Malformed {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
    };
    let (ti, vi) = (col("t")?, col("v")?);

    let mut points: Vec<[f64; 2]> = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TraceError::Malformed {
            line: e.position().map_or(0, |p| p.line() as usize),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| -> Result<f64, TraceError> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| TraceError::Malformed {
                    line,
                    reason: format!("not a finite number: {raw:?}"),
                })
        };
        let (t, v) = (field(ti)?, field(vi)?);
        if v < 0.0 {
            return Err(TraceError::NegativeSpeed { line, speed: v });
        }
        if points.last().is_some_and(|p| !(t > p[0])) {
            return Err(TraceError::NonMonotoneTime { line });
        }
        points.push([t, v]);
    }
    if points.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(LeadProfile::Piecewise { points })
}
