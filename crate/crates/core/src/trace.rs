//! Per-tick record of a platoon run and its CSV form.

use std::io::{Read, Write};

use serde::Serialize;

use crate::error::TraceError;
use crate::model::VehicleState;

/// CSV header, in column order.
pub const CSV_COLUMNS: [&str; 14] = [
    "t",
    "vehicle_id",
    "x",
    "v",
    "a",
    "v_target",
    "a_target",
    "v_pid",
    "a_pid",
    "p_term",
    "i_term",
    "f_term",
    "control",
    "gb",
];

/// One vehicle at one control tick. Controller fields are `None` for the
/// lead; planner fields are `None` when the vehicle's planner does not
/// produce them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TraceRow {
    pub tick: usize,
    pub t: f64,
    pub state: VehicleState,
    pub v_target: Option<f64>,
    pub a_target: Option<f64>,
    pub v_pid: Option<f64>,
    pub a_pid: Option<f64>,
    pub p_term: Option<f64>,
    pub i_term: Option<f64>,
    pub f_term: Option<f64>,
    pub control: Option<f64>,
    pub gb: Option<f64>,
    /// Surrogate start states in force during this planning period.
    pub v_start: Option<f64>,
    pub a_start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VehicleTrace {
    /// 0 is the lead, followers count up from 1.
    pub id: usize,
    pub rows: Vec<TraceRow>,
}

/// Outcome of one MPC solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverRecord {
    pub vehicle: usize,
    pub tick: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub cost: f64,
    pub cost_nonincreasing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Collision {
    pub tick: usize,
    pub t: f64,
    pub vehicle: usize,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PlatoonTrace {
    pub control_dt: f64,
    pub plan_dt: f64,
    pub horizon_dt: f64,
    pub vehicles: Vec<VehicleTrace>,
    pub solver: Vec<SolverRecord>,
    pub collision: Option<Collision>,
}

impl PlatoonTrace {
    pub fn vehicle(&self, id: usize) -> Option<&VehicleTrace> {
        self.vehicles.get(id)
    }

    pub fn follower_count(&self) -> usize {
        self.vehicles.len().saturating_sub(1)
    }

    pub fn ticks(&self) -> usize {
        self.vehicles.first().map_or(0, |v| v.rows.len())
    }

    pub fn steps_per_plan(&self) -> usize {
        ((self.plan_dt / self.control_dt).round() as usize).max(1)
    }

    /// `(t, value)` for every control tick of one vehicle.
    pub fn series(&self, id: usize, f: impl Fn(&TraceRow) -> f64) -> Vec<(f64, f64)> {
        self.vehicles
            .get(id)
            .map(|v| v.rows.iter().map(|r| (r.t, f(r))).collect())
            .unwrap_or_default()
    }

    /// Rows of one vehicle sampled at planning ticks.
    pub fn plan_rows(&self, id: usize) -> Vec<&TraceRow> {
        let every = self.steps_per_plan();
        self.vehicles
            .get(id)
            .map(|v| v.rows.iter().filter(|r| r.tick % every == 0).collect())
            .unwrap_or_default()
    }

    /// Gap from vehicle `id` to its predecessor at every tick.
    pub fn gaps(&self, id: usize) -> Vec<(f64, f64)> {
        if id == 0 || id >= self.vehicles.len() {
            return Vec::new();
        }
        self.vehicles[id]
            .rows
            .iter()
            .zip(&self.vehicles[id - 1].rows)
            .map(|(me, pred)| (me.t, pred.state.x - me.state.x))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let fmt = |x: f64| format!("{x:.16e}");
        let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
        for tick in 0..self.ticks() {
            for veh in &self.vehicles {
                let Some(r) = veh.rows.get(tick) else { continue };
                w.write_record([
                    fmt(r.t),
                    veh.id.to_string(),
                    fmt(r.state.x),
                    fmt(r.state.v),
                    fmt(r.state.a),
                    opt(r.v_target),
                    opt(r.a_target),
                    opt(r.v_pid),
                    opt(r.a_pid),
                    opt(r.p_term),
                    opt(r.i_term),
                    opt(r.f_term),
                    opt(r.control),
                    opt(r.gb),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Parses a trace CSV. Timing that the CSV does not carry (the planning
    /// and horizon periods) is supplied by the caller; the control period is
    /// read off the timestamps. Start states are recovered from v_pid/a_pid
    /// at planning ticks.
    pub fn read_csv<R: Read>(input: R, plan_dt: f64, horizon_dt: f64) -> Result<Self, TraceError> {
        let mut rdr = csv::Reader::from_reader(input);
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
                .position(|h| h.trim() == name)
                .ok_or_else(|| TraceError::MissingColumn(name.to_string()))
        };
        let idx: Vec<usize> = CSV_COLUMNS.iter().map(|c| col(c)).collect::<Result<_, _>>()?;
        let mut vehicles: Vec<VehicleTrace> = Vec::new();
        for (n, rec) in rdr.records().enumerate() {
            let line = n + 2;
            let rec = rec.map_err(|e| TraceError::Malformed {
                line,
                reason: e.to_string(),
            })?;
            let field = |i: usize| rec.get(idx[i]).unwrap_or("").trim();
            let num = |i: usize| -> Result<f64, TraceError> {
                field(i).parse::<f64>().map_err(|_| TraceError::Malformed {
                    line,
                    reason: format!("bad number in column {}", CSV_COLUMNS[i]),
                })
            };
            let opt = |i: usize| -> Result<Option<f64>, TraceError> {
                if field(i).is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            let id: usize = field(1).parse().map_err(|_| TraceError::Malformed {
                line,
                reason: "bad vehicle_id".into(),
            })?;
            if id >= vehicles.len() {
                vehicles.resize_with(id + 1, Default::default);
                for (k, v) in vehicles.iter_mut().enumerate() {
                    v.id = k;
                }
            }
            let rows = &mut vehicles[id].rows;
            let row = TraceRow {
                tick: rows.len(),
                t: num(0)?,
                state: VehicleState::new(num(2)?, num(3)?, num(4)?),
                v_target: opt(5)?,
                a_target: opt(6)?,
                v_pid: opt(7)?,
                a_pid: opt(8)?,
                p_term: opt(9)?,
                i_term: opt(10)?,
                f_term: opt(11)?,
                control: opt(12)?,
                gb: opt(13)?,
                v_start: None,
                a_start: None,
            };
            if let Some(prev) = rows.last() {
                if !(row.t > prev.t) {
                    return Err(TraceError::NonMonotoneTime { line });
                }
            }
            rows.push(row);
        }
        if vehicles.is_empty() || vehicles[0].rows.len() < 2 {
            return Err(TraceError::Empty);
        }
        let r = &vehicles[0].rows;
        let control_dt = (r[r.len() - 1].t - r[0].t) / (r.len() - 1) as f64;
        let mut trace = PlatoonTrace {
            control_dt,
            plan_dt,
            horizon_dt,
            vehicles,
            solver: Vec::new(),
            collision: None,
        };
        let every = trace.steps_per_plan();
        for veh in &mut trace.vehicles {
            let mut start: Option<(f64, f64)> = None;
            for row in &mut veh.rows {
                if row.a_target.is_some() && row.tick % every == 0 {
                    start = row.v_pid.zip(row.a_pid);
                }
                if row.a_target.is_some() {
                    if let Some((v, a)) = start {
                        row.v_start = Some(v);
                        row.a_start = Some(a);
                    }
                }
            }
        }
        Ok(trace)
    }
}
