//! String-stability measures over platoon traces.

use serde::Serialize;

use crate::error::MetricsError;
use crate::model::Gain;
use crate::planner::linear::{LinearPlanner, LinearPlannerParams};
use crate::trace::{PlatoonTrace, TraceRow};

/// Detection thresholds for [`detect_response_window`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowConfig {
    /// Onset rate, m/s².
    pub theta1: f64,
    /// Settling rate, m/s².
    pub theta2: f64,
    /// How long the rate must stay below `theta2`, s.
    pub hold: f64,
    /// Smallest lead speed change an index is defined for, m/s.
    pub lead_floor: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            theta1: 0.05,
            theta2: 0.02,
            hold: 0.5,
            lead_floor: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResponseWindow {
    /// Reference sample before the disturbance; changes are measured from
    /// here, s.
    pub t0: f64,
    /// Reaction onset, s.
    pub t1: f64,
    /// Span from onset to stabilization, s.
    pub delta_t: f64,
}

impl ResponseWindow {
    pub fn end(&self) -> f64 {
        self.t1 + self.delta_t
    }
}

/// The series a vehicle's response is read from: v_target behind a linear
/// planner, v_start behind an MPC planner. `None` for the lead.
pub fn response_value(row: &TraceRow) -> Option<f64> {
    row.v_target.or(row.v_start)
}

fn plan_series(trace: &PlatoonTrace, id: usize) -> Result<Vec<(f64, f64)>, MetricsError> {
    if id == 0 || id >= trace.vehicles.len() {
        return Err(MetricsError::UnknownVehicle(id));
    }
    trace
        .plan_rows(id)
        .into_iter()
        .map(|r| response_value(r).map(|v| (r.t, v)).ok_or(MetricsError::MissingSeries("v_target or v_start")))
        .collect()
}

/// Index of the plan tick at time `t` (rounded) in a plan-rate series.
fn index_at(series: &[(f64, f64)], t: f64) -> usize {
    series.partition_point(|&(ts, _)| ts < t - 1e-9).min(series.len().saturating_sub(1))
}

/// Finds the reaction of follower `id` to a lead speed change at
/// `event_time`. Returns `Ok(None)` when the response never crosses the
/// onset threshold.
pub fn detect_response_window(
    trace: &PlatoonTrace,
    id: usize,
    event_time: f64,
    cfg: &WindowConfig,
) -> Result<Option<ResponseWindow>, MetricsError> {
    let s = plan_series(trace, id)?;
    let dt = trace.plan_dt;
    let rate = |k: usize| (s[k].1 - s[k - 1].1) / dt;
    let Some(k1) = (1..s.len()).find(|&k| s[k].0 > event_time && rate(k).abs() > cfg.theta1) else {
        return Ok(None);
    };
    let dir = rate(k1).signum();
    let hold_ticks = ((cfg.hold / dt).round() as usize).max(1);
    let mut end = s.len() - 1;
    let mut quiet_since: Option<usize> = None;
    for k in k1 + 1..s.len() {
        let r = rate(k);
        if r * dir < 0.0 && r.abs() > 1e-12 {
            end = k - 1;
            break;
        }
        if r.abs() < cfg.theta2 {
            let q = *quiet_since.get_or_insert(k);
            if k + 1 - q >= hold_ticks {
                end = q - 1;
                break;
            }
        } else {
            quiet_since = None;
        }
    }
    let t1 = s[k1].0;
    let delta_t = s[end].0 - t1;
    if delta_t <= 0.0 {
        return Ok(None);
    }
    let k0 = s.partition_point(|&(t, _)| t <= event_time + 1e-9).saturating_sub(1).min(k1 - 1);
    Ok(Some(ResponseWindow {
        t0: s[k0].0,
        t1,
        delta_t,
    }))
}

/// Plan-tick indices `(baseline, end)` of a window.
fn window_span(series: &[(f64, f64)], w: &ResponseWindow) -> (usize, usize) {
    (index_at(series, w.t0), index_at(series, w.end()))
}

fn predecessor_speeds(trace: &PlatoonTrace, id: usize) -> Vec<f64> {
    trace.plan_rows(id - 1).iter().map(|r| r.state.v).collect()
}

fn lead_change(trace: &PlatoonTrace, id: usize, b: usize, e: usize, floor: f64) -> Result<f64, MetricsError> {
    let v = predecessor_speeds(trace, id);
    let dv = (v[e.min(v.len() - 1)] - v[b]).abs();
    if dv < floor {
        return Err(MetricsError::LeadChangeTooSmall(dv));
    }
    Ok(dv)
}

/// (|Δv_target| − |Δv_lead|)/|Δv_lead| over the window, where both changes
/// run from the reference sample to the end of the window and v_lead is the
/// predecessor's speed.
pub fn linear_ss_index(
    trace: &PlatoonTrace,
    id: usize,
    w: &ResponseWindow,
    cfg: &WindowConfig,
) -> Result<f64, MetricsError> {
    let s = plan_series(trace, id)?;
    let (b, e) = window_span(&s, w);
    if e <= b {
        return Err(MetricsError::EmptyWindow);
    }
    let dv_lead = lead_change(trace, id, b, e, cfg.lead_floor)?;
    let dv_target = (s[e].1 - s[b].1).abs();
    Ok((dv_target - dv_lead) / dv_lead)
}

/// Upper bound k_v·((|v̄_rel^target| + |ē|)·ΔT/|Δv_lead| − H_t) on
/// [`linear_ss_index`], with v_rel^target = v_lead − v_target and
/// e = v_target − v_ego averaged over the control ticks the spacing
/// integrates across. The headway term is written |1 − k_v·H_t| − 1, which
/// equals −k_v·H_t whenever k_v·H_t ≤ 1 and keeps the bound valid above.
/// The inequality is exact for noise-free traces whose planner did not hit
/// its rate limit inside the window.
pub fn linear_ss_bound(
    trace: &PlatoonTrace,
    id: usize,
    w: &ResponseWindow,
    k_v: &Gain,
    headway: f64,
    cfg: &WindowConfig,
) -> Result<f64, MetricsError> {
    let s = plan_series(trace, id)?;
    let (b, e) = window_span(&s, w);
    if e <= b {
        return Err(MetricsError::EmptyWindow);
    }
    let dv_lead = lead_change(trace, id, b, e, cfg.lead_floor)?;
    let plan = trace.plan_rows(id);
    let (tb, te) = (plan[b].tick, plan[e].tick);
    let ego = &trace.vehicles[id].rows;
    let lead = &trace.vehicles[id - 1].rows;
    let (mut rel, mut err) = (0.0, 0.0);
    // The gap at tick te differs from the one at tb by the speeds logged at
    // ticks tb+1..=te, each held for one control step.
    for j in tb + 1..=te {
        let vt = ego[j].v_target.ok_or(MetricsError::MissingSeries("v_target"))?;
        rel += lead[j].state.v - vt;
        err += vt - ego[j].state.v;
    }
    let dt = trace.control_dt;
    let k = k_v.max_value();
    Ok(k * (rel.abs() + err.abs()) * dt / dv_lead + (1.0 - k * headway).abs() - 1.0)
}

fn a_targets(trace: &PlatoonTrace, id: usize) -> Result<Vec<f64>, MetricsError> {
    if id == 0 || id >= trace.vehicles.len() {
        return Err(MetricsError::UnknownVehicle(id));
    }
    trace
        .plan_rows(id)
        .iter()
        .map(|r| r.a_target.ok_or(MetricsError::MissingSeries("a_target")))
        .collect()
}

/// Change of v_start across the window rebuilt from the logged a_target
/// series and the a_start in force at the baseline sample, using the
/// surrogate recursion a_s ← a_s + (dt̂/dt_p)(a_t − a_s),
/// v_s ← v_s + dt̂·(a_t + a_s)/2.
pub fn delta_v_start(trace: &PlatoonTrace, id: usize, w: &ResponseWindow) -> Result<f64, MetricsError> {
    let s = plan_series(trace, id)?;
    let at = a_targets(trace, id)?;
    let (b, e) = window_span(&s, w);
    if e <= b {
        return Err(MetricsError::EmptyWindow);
    }
    let rows = trace.plan_rows(id);
    let mut a_s = rows[b].a_start.ok_or(MetricsError::MissingSeries("a_start"))?;
    let dt = trace.plan_dt;
    let c = dt / trace.horizon_dt;
    let mut dv = 0.0;
    for &a in &at[b..e] {
        a_s += c * (a - a_s);
        dv += dt * (a + a_s) / 2.0;
    }
    Ok(dv)
}

/// −1 + dt̂/(2|Δv_lead|)·Σ_m (|a_t(m)| + Σ_{n≤m} c·r^{m−n}|a_t(n)|) with
/// c = dt̂/dt_p and r = 1 − c, summed over the plan ticks of the window.
pub fn mpc_ss_index(
    trace: &PlatoonTrace,
    id: usize,
    w: &ResponseWindow,
    cfg: &WindowConfig,
) -> Result<f64, MetricsError> {
    let s = plan_series(trace, id)?;
    let at = a_targets(trace, id)?;
    let (b, e) = window_span(&s, w);
    if e <= b {
        return Err(MetricsError::EmptyWindow);
    }
    let dv_lead = lead_change(trace, id, b, e, cfg.lead_floor)?;
    Ok(mpc_index_from_series(&at[b..e], trace.plan_dt, trace.horizon_dt, dv_lead))
}

/// Mean of [`mpc_ss_index`] over the response windows that follow each of
/// `events`, e.g. the speed extrema of a periodic lead. Events without a
/// window are skipped; an error is returned only if none yields an index.
pub fn mean_mpc_index(
    trace: &PlatoonTrace,
    id: usize,
    events: &[f64],
    cfg: &WindowConfig,
) -> Result<f64, MetricsError> {
    let mut sum = 0.0;
    let mut n = 0usize;
    let mut last_err = MetricsError::EmptyWindow;
    for &te in events {
        let idx = detect_response_window(trace, id, te, cfg)
            .and_then(|w| w.ok_or(MetricsError::EmptyWindow))
            .and_then(|w| mpc_ss_index(trace, id, &w, cfg));
        match idx {
            Ok(i) => {
                sum += i;
                n += 1;
            }
            Err(e) => last_err = e,
        }
    }
    if n == 0 {
        return Err(last_err);
    }
    Ok(sum / n as f64)
}

/// The sum behind [`mpc_ss_index`] for an explicit a_target series.
pub fn mpc_index_from_series(a_target: &[f64], plan_dt: f64, horizon_dt: f64, dv_lead: f64) -> f64 {
    let c = plan_dt / horizon_dt;
    let r = 1.0 - c;
    let mut filtered = 0.0;
    let mut total = 0.0;
    for a in a_target {
        filtered = r * filtered + c * a.abs();
        total += a.abs() + filtered;
    }
    -1.0 + plan_dt * total / (2.0 * dv_lead)
}

/// Speed excursion (max − min) of `down` divided by that of `up`, over
/// control ticks with `from ≤ t ≤ to`.
pub fn amplification_ratio(
    trace: &PlatoonTrace,
    up: usize,
    down: usize,
    from: f64,
    to: f64,
) -> Result<f64, MetricsError> {
    let excursion = |id: usize| -> Result<f64, MetricsError> {
        let v = trace.vehicle(id).ok_or(MetricsError::UnknownVehicle(id))?;
        let (lo, hi) = v
            .rows
            .iter()
            .filter(|r| r.t >= from - 1e-9 && r.t <= to + 1e-9)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r.state.v), hi.max(r.state.v))
            });
        if lo > hi {
            return Err(MetricsError::EmptyWindow);
        }
        Ok(hi - lo)
    };
    let eu = excursion(up)?;
    if eu <= 1e-12 {
        return Err(MetricsError::ZeroUpstreamExcursion);
    }
    Ok(excursion(down)? / eu)
}

/// First time the lead's logged speed departs from its initial value.
pub fn lead_event_time(trace: &PlatoonTrace) -> Option<f64> {
    let rows = &trace.vehicle(0)?.rows;
    let v0 = rows.first()?.state.v;
    let k = rows.iter().position(|r| (r.state.v - v0).abs() > 1e-9)?;
    Some(rows[k.saturating_sub(1)].t)
}

/// Closed-form speed-to-speed gain of the linear planner under ideal tracking.
pub fn transfer_gain(k_v: f64, headway: f64, omega: f64) -> f64 {
    let a = (1.0 - k_v * headway) * omega;
    (a * a + k_v * k_v).sqrt() / (omega * omega + k_v * k_v).sqrt()
}

/// `n` log-spaced frequencies from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HinfCheck {
    pub k_v: f64,
    pub headway: f64,
    pub sup_gain: f64,
    pub argmax_omega: f64,
    pub satisfied: bool,
}

pub fn hinf_check(k_v: f64, headway: f64, grid: &[f64]) -> HinfCheck {
    let (argmax_omega, sup_gain) = grid
        .iter()
        .map(|&w| (w, transfer_gain(k_v, headway, w)))
        .fold((f64::NAN, f64::NEG_INFINITY), |best, x| if x.1 > best.1 { x } else { best });
    HinfCheck {
        k_v,
        headway,
        sup_gain,
        argmax_omega,
        satisfied: sup_gain <= 1.0 + 1e-9,
    }
}

/// Default grid for [`hinf_check`]: 2000 points over [1e-3, 1e2] rad/s.
pub fn default_grid() -> Vec<f64> {
    log_grid(1e-3, 1e2, 2000)
}

/// Amplitude ratio of the linear planner alone (ego speed ≡ v_target) behind
/// a lead whose speed is `v0 + amplitude·sin(ωt)`, measured after the
/// transient has decayed.
pub fn ideal_tracking_gain(params: &LinearPlannerParams, v0: f64, amplitude: f64, omega: f64, plan_dt: f64) -> f64 {
    let k_v = params.k_v.at(v0);
    let period = std::f64::consts::TAU / omega;
    let settle = (10.0 / k_v).max(2.0 * period);
    let total = settle + 4.0 * period;
    let steps = (total / plan_dt).ceil() as usize;
    let s0 = params.s_j + params.headway * v0;
    let (mut x_lead, mut x_ego) = (s0, 0.0);
    let mut planner = LinearPlanner::new(params.clone());
    planner.reset(v0);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for k in 0..steps {
        let t = k as f64 * plan_dt;
        let v_lead = v0 + amplitude * (omega * t).sin();
        let v_ego = planner.plan(x_lead - x_ego, v_lead, v_lead, plan_dt);
        if t >= settle {
            lo = lo.min(v_ego);
            hi = hi.max(v_ego);
        }
        // exact lead displacement over the step
        x_lead += v0 * plan_dt - amplitude / omega * ((omega * (t + plan_dt)).cos() - (omega * t).cos());
        x_ego += v_ego * plan_dt;
    }
    (hi - lo) / (2.0 * amplitude)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlannerKind {
    Linear,
    Mpc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VehicleReport {
    pub vehicle: usize,
    pub window: Option<ResponseWindow>,
    pub index: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairRatio {
    pub upstream: usize,
    pub downstream: usize,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub planner: PlannerKind,
    pub event_time: Option<f64>,
    pub window_config: WindowConfig,
    pub vehicles: Vec<VehicleReport>,
    pub amplification: Vec<PairRatio>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hinf: Option<HinfCheck>,
}

impl AnalysisReport {
    /// Ratio of the last follower to its predecessor.
    pub fn last_ratio(&self) -> Option<f64> {
        self.amplification.last().and_then(|p| p.ratio)
    }

    /// Index of the last follower.
    pub fn last_index(&self) -> Option<f64> {
        self.vehicles.last().and_then(|v| v.index)
    }
}

/// Windows, indices and pairwise amplification ratios for every follower.
/// Amplification runs from the lead event to the end of the trace. `linear`
/// supplies k_v and H_t for the bound and the frequency check.
pub fn analyze(
    trace: &PlatoonTrace,
    planner: PlannerKind,
    linear: Option<&LinearPlannerParams>,
    cfg: &WindowConfig,
) -> AnalysisReport {
    let event_time = lead_event_time(trace);
    let t_end = trace.vehicle(0).and_then(|v| v.rows.last()).map_or(0.0, |r| r.t);
    let from = event_time.unwrap_or(0.0);
    let mut vehicles = Vec::new();
    let mut amplification = Vec::new();
    for id in 1..trace.vehicles.len() {
        let mut rep = VehicleReport {
            vehicle: id,
            window: None,
            index: None,
            bound: None,
            error: None,
        };
        match detect_response_window(trace, id, from, cfg) {
            Ok(Some(w)) => {
                rep.window = Some(w);
                let idx = match planner {
                    PlannerKind::Linear => linear_ss_index(trace, id, &w, cfg),
                    PlannerKind::Mpc => mpc_ss_index(trace, id, &w, cfg),
                };
                match idx {
                    Ok(i) => rep.index = Some(i),
                    Err(e) => rep.error = Some(e.to_string()),
                }
                if let (PlannerKind::Linear, Some(p)) = (planner, linear) {
                    rep.bound = linear_ss_bound(trace, id, &w, &p.k_v, p.headway, cfg).ok();
                }
            }
            Ok(None) => rep.error = Some("no response window".into()),
            Err(e) => rep.error = Some(e.to_string()),
        }
        vehicles.push(rep);
        amplification.push(PairRatio {
            upstream: id - 1,
            downstream: id,
            ratio: amplification_ratio(trace, id - 1, id, from, t_end).ok(),
        });
    }
    let hinf = match (planner, linear) {
        (PlannerKind::Linear, Some(p)) => Some(hinf_check(p.k_v.max_value(), p.headway, &default_grid())),
        _ => None,
    };
    AnalysisReport {
        planner,
        event_time,
        window_config: *cfg,
        vehicles,
        amplification,
        hinf,
    }
}
