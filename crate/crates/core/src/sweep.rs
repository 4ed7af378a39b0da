//! One-parameter sweeps over a base scenario.
//!
//! A parameter path is a dotted list of object keys and array indices into
//! the scenario's JSON form, e.g. `vehicles.*.actuator.resp_scale` or
//! `vehicles.0.controller.kp`. `*` addresses every element of an array.

use std::io::Write;

use rayon::prelude::*;
use serde_json::Value;

use crate::error::SweepError;
use crate::metrics::{analyze, PlannerKind, WindowConfig};
use crate::model::{PlannerConfig, Scenario};
use crate::sim::run_platoon;

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// Response index of the last follower.
    pub index: Option<f64>,
    /// Pairwise amplification ratios, nearest to the lead first.
    pub ratios: Vec<Option<f64>>,
    pub collision: bool,
    /// Why the run or its analysis did not complete.
    pub error: Option<String>,
}

impl SweepRow {
    pub fn last_ratio(&self) -> Option<f64> {
        self.ratios.last().copied().flatten()
    }

    /// True when the run finished without collision or numerical failure.
    pub fn ok(&self) -> bool {
        !self.collision && self.error.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub param: String,
    pub followers: usize,
    pub rows: Vec<SweepRow>,
}

impl SweepSummary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["value".to_string(), "index".to_string()];
        header.extend((1..=self.followers).map(|i| format!("ratio_{}_{}", i - 1, i)));
        header.extend(["collision".to_string(), "error".to_string()]);
        w.write_record(&header)?;
        let num = |x: Option<f64>| x.map(|v| format!("{v:.12e}")).unwrap_or_default();
        for r in &self.rows {
            let mut rec = vec![format!("{:.12e}", r.value), num(r.index)];
            rec.extend((0..self.followers).map(|i| num(r.ratios.get(i).copied().flatten())));
            rec.push(r.collision.to_string());
            rec.push(r.error.clone().unwrap_or_default());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

fn segments(path: &str) -> Vec<&str> {
    path.split('.').filter(|s| !s.is_empty()).collect()
}

/// Visits every leaf addressed by `path`. Returns false when some branch
/// does not exist.
fn visit(v: &mut Value, segs: &[&str], f: &mut dyn FnMut(&mut Value)) -> bool {
    let Some((head, rest)) = segs.split_first() else {
        f(v);
        return true;
    };
    match v {
        Value::Array(items) if *head == "*" => {
            !items.is_empty() && items.iter_mut().all(|item| visit(item, rest, f))
        }
        Value::Array(items) => match head.parse::<usize>().ok().and_then(|i| items.get_mut(i)) {
            Some(item) => visit(item, rest, f),
            None => false,
        },
        Value::Object(map) => match map.get_mut(*head) {
            Some(item) => visit(item, rest, f),
            None => false,
        },
        _ => false,
    }
}

/// Writes `value` into every field addressed by `path`.
pub fn set_param(base: &Scenario, path: &str, value: f64) -> Result<Scenario, SweepError> {
    let invalid = || SweepError::InvalidPath(path.to_string());
    let segs = segments(path);
    if segs.is_empty() {
        return Err(invalid());
    }
    let mut json = serde_json::to_value(base).map_err(|_| invalid())?;
    let number = serde_json::Number::from_f64(value).ok_or_else(invalid)?;
    let mut numeric = true;
    let found = visit(&mut json, &segs, &mut |leaf| {
        if leaf.is_number() {
            *leaf = Value::Number(number.clone());
        } else {
            numeric = false;
        }
    });
    if !found || !numeric {
        return Err(invalid());
    }
    let s: Scenario = serde_json::from_value(json).map_err(|_| invalid())?;
    Ok(s.validate()?)
}

fn run_one(base: &Scenario, path: &str, value: f64, kind: PlannerKind) -> SweepRow {
    let mut row = SweepRow {
        value,
        index: None,
        ratios: Vec::new(),
        collision: false,
        error: None,
    };
    let scenario = match set_param(base, path, value) {
        Ok(s) => s,
        Err(e) => {
            row.error = Some(e.to_string());
            return row;
        }
    };
    match run_platoon(&scenario) {
        Ok(trace) => {
            row.collision = trace.collision.is_some();
            let linear = match &scenario.vehicles[0].planner {
                PlannerConfig::Linear(p) => Some(p),
                PlannerConfig::Mpc(_) => None,
            };
            let report = analyze(&trace, kind, linear, &WindowConfig::default());
            row.index = report.last_index();
            row.ratios = report.amplification.iter().map(|p| p.ratio).collect();
        }
        Err(e) => row.error = Some(e.to_string()),
    }
    row
}

/// Runs one simulation and analysis per value on `jobs` threads (0 picks
/// the number of cores). Rows come back in the order of `values`; a failing
/// run is recorded in its row and does not stop the sweep.
pub fn run_sweep(base: &Scenario, path: &str, values: &[f64], jobs: usize) -> Result<SweepSummary, SweepError> {
    let base = base.clone().validate()?;
    // Check the path once against the base so a typo fails fast.
    let mut json = serde_json::to_value(&base).map_err(|_| SweepError::InvalidPath(path.to_string()))?;
    let segs = segments(path);
    let mut numeric = true;
    let found = !segs.is_empty() && visit(&mut json, &segs, &mut |leaf| numeric &= leaf.is_number());
    if !found || !numeric {
        return Err(SweepError::InvalidPath(path.to_string()));
    }

    let kind = if base.vehicles[0].planner.is_mpc() {
        PlannerKind::Mpc
    } else {
        PlannerKind::Linear
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .expect("thread pool");
    let rows = pool.install(|| values.par_iter().map(|&v| run_one(&base, path, v, kind)).collect());
    Ok(SweepSummary {
        param: path.to_string(),
        followers: base.vehicles.len(),
        rows,
    })
}
