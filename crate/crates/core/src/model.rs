//! Scenario data model shared by the planners, the low-level loop and the
//! simulator. Everything is in SI units.

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::planner::linear::LinearPlannerParams;
use crate::planner::mpc::MpcParams;

/// Default proportional gain of the low-level controller.
pub const DEFAULT_KP: f64 = 1.0;
/// Default integral gain of the low-level controller.
pub const DEFAULT_KI: f64 = 0.3;
/// Default feedforward gain of the PIF controller.
pub const DEFAULT_KF: f64 = 1.0;

const RATIO_TOL: f64 = 1e-9;

/// State of one vehicle at one control tick.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    /// Position of the front bumper, m.
    pub x: f64,
    /// Speed, m/s. Never negative.
    pub v: f64,
    /// Acceleration, m/s².
    pub a: f64,
}

impl VehicleState {
    pub fn new(x: f64, v: f64, a: f64) -> Self {
        Self { x, v, a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TimingConfig {
    /// Planner period, s.
    pub plan_dt: f64,
    /// Low-level control period, s.
    pub control_dt: f64,
    /// Step along the MPC prediction horizon, s.
    pub horizon_dt: f64,
    /// Length of the MPC prediction horizon, s.
    pub mpc_horizon: f64,
    /// Simulated time, s.
    pub duration: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            plan_dt: 0.05,
            control_dt: 0.01,
            horizon_dt: 0.2,
            mpc_horizon: 2.0,
            duration: 60.0,
        }
    }
}

fn integer_ratio(num: f64, den: f64) -> Option<usize> {
    if !(num > 0.0 && den > 0.0) {
        return None;
    }
    let r = num / den;
    let n = r.round();
    if n >= 1.0 && (r - n).abs() <= RATIO_TOL * n.max(1.0) {
        Some(n as usize)
    } else {
        None
    }
}

impl TimingConfig {
    /// Number of control ticks per planning period.
    pub fn steps_per_plan(&self) -> usize {
        integer_ratio(self.plan_dt, self.control_dt).unwrap_or(1)
    }

    /// Number of steps along the MPC horizon.
    pub fn horizon_steps(&self) -> usize {
        integer_ratio(self.mpc_horizon, self.horizon_dt).unwrap_or(1)
    }

    /// Number of control ticks in the whole run.
    pub fn total_ticks(&self) -> usize {
        (self.duration / self.control_dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        for (name, value) in [
            ("plan_dt", self.plan_dt),
            ("control_dt", self.control_dt),
            ("horizon_dt", self.horizon_dt),
            ("mpc_horizon", self.mpc_horizon),
            ("duration", self.duration),
        ] {
            if !(value.is_finite() && value > 0.0) {
                return Err(ScenarioError::invalid(
                    format!("timing.{name}"),
                    "must be finite and positive",
                ));
            }
        }
        if integer_ratio(self.plan_dt, self.control_dt).is_none() {
            return Err(ScenarioError::invalid(
                "timing.plan_dt",
                format!(
                    "plan_dt {} is not an integer multiple of control_dt {}",
                    self.plan_dt, self.control_dt
                ),
            ));
        }
        if integer_ratio(self.mpc_horizon, self.horizon_dt).is_none() {
            return Err(ScenarioError::invalid(
                "timing.mpc_horizon",
                format!(
                    "mpc_horizon {} is not an integer multiple of horizon_dt {}",
                    self.mpc_horizon, self.horizon_dt
                ),
            ));
        }
        if self.duration < self.plan_dt {
            return Err(ScenarioError::invalid(
                "timing.duration",
                "shorter than one planning period",
            ));
        }
        Ok(())
    }
}

/// Piecewise-linear table over ego speed with flat extrapolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSchedule {
    pub speeds: Vec<f64>,
    pub values: Vec<f64>,
}

impl GainSchedule {
    pub fn at(&self, v: f64) -> f64 {
        interp_flat(&self.speeds, &self.values, v)
    }
}

/// A gain that is either constant or scheduled over ego speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Gain {
    Constant(f64),
    Schedule(GainSchedule),
}

impl Default for Gain {
    fn default() -> Self {
        Gain::Constant(0.0)
    }
}

impl From<f64> for Gain {
    fn from(value: f64) -> Self {
        Gain::Constant(value)
    }
}

impl Gain {
    pub fn at(&self, v: f64) -> f64 {
        match self {
            Gain::Constant(k) => *k,
            Gain::Schedule(s) => s.at(v),
        }
    }

    /// Same gain multiplied by `factor` everywhere.
    pub fn scaled(&self, factor: f64) -> Gain {
        match self {
            Gain::Constant(k) => Gain::Constant(k * factor),
            Gain::Schedule(s) => Gain::Schedule(GainSchedule {
                speeds: s.speeds.clone(),
                values: s.values.iter().map(|v| v * factor).collect(),
            }),
        }
    }

    fn values(&self) -> Vec<f64> {
        match self {
            Gain::Constant(k) => vec![*k],
            Gain::Schedule(s) => s.values.clone(),
        }
    }

    /// Smallest value the gain takes anywhere.
    pub fn min_value(&self) -> f64 {
        self.values().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Largest value the gain takes anywhere.
    pub fn max_value(&self) -> f64 {
        self.values().into_iter().fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn validate(&self, path: &str) -> Result<(), ScenarioError> {
        if let Gain::Schedule(s) = self {
            if s.speeds.is_empty() || s.speeds.len() != s.values.len() {
                return Err(ScenarioError::invalid(
                    path,
                    "schedule needs equally many speeds and values (at least one)",
                ));
            }
            if s.speeds.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(ScenarioError::invalid(
                    path,
                    "schedule speeds must be strictly increasing",
                ));
            }
            if s.speeds.iter().any(|v| !v.is_finite()) {
                return Err(ScenarioError::invalid(path, "non-finite schedule speed"));
            }
        }
        if self.values().iter().any(|v| !v.is_finite()) {
            return Err(ScenarioError::invalid(path, "non-finite gain value"));
        }
        Ok(())
    }
}

pub(crate) fn interp_flat(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    if xs.is_empty() {
        return 0.0;
    }
    if x <= xs[0] {
        return ys[0];
    }
    let last = xs.len() - 1;
    if x >= xs[last] {
        return ys[last];
    }
    // xs strictly increasing, so the partition point is in 1..=last
    let i = xs.partition_point(|&p| p <= x);
    let (x0, x1) = (xs[i - 1], xs[i]);
    let (y0, y1) = (ys[i - 1], ys[i]);
    y0 + (y1 - y0) * (x - x0) / (x1 - x0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AntiWindup {
    /// Integrate unconditionally.
    #[default]
    None,
    /// Keep |integral| ≤ limit. Without an explicit limit it is a_max / ki.
    Clamp {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        limit: Option<f64>,
    },
    /// Stop integrating while the actuator command is saturated in the
    /// direction of the error.
    Freeze,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub kp: Gain,
    pub ki: Gain,
    /// Feedforward gain on a_pid; only used behind an MPC planner.
    pub kf: Gain,
    /// Upper acceleration limit of the setpoint ramp, m/s².
    pub a_max: f64,
    /// Lower acceleration limit of the setpoint ramp, m/s².
    pub a_min: f64,
    /// Overshoot allowance of the setpoint ramp, m/s.
    pub overshoot_allowance: f64,
    pub antiwindup: AntiWindup,
    /// Speed errors at or below this magnitude are treated as zero, m/s.
    pub deadzone: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: Gain::Constant(DEFAULT_KP),
            ki: Gain::Constant(DEFAULT_KI),
            kf: Gain::Constant(DEFAULT_KF),
            a_max: 2.0,
            a_min: -3.5,
            overshoot_allowance: 2.0,
            antiwindup: AntiWindup::None,
            deadzone: 0.0,
        }
    }
}

impl ControllerConfig {
    pub(crate) fn validate(&self, path: &str) -> Result<(), ScenarioError> {
        for (name, gain) in [("kp", &self.kp), ("ki", &self.ki), ("kf", &self.kf)] {
            let p = format!("{path}.{name}");
            gain.validate(&p)?;
            if gain.min_value() < 0.0 {
                return Err(ScenarioError::invalid(p, "gain must be non-negative"));
            }
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) || !self.a_min.is_finite() || !self.a_max.is_finite()
        {
            return Err(ScenarioError::invalid(
                format!("{path}.a_min"),
                "need a_min < 0 < a_max",
            ));
        }
        if !(self.overshoot_allowance > 0.0 && self.overshoot_allowance.is_finite()) {
            return Err(ScenarioError::invalid(
                format!("{path}.overshoot_allowance"),
                "must be positive",
            ));
        }
        if !(self.deadzone >= 0.0 && self.deadzone.is_finite()) {
            return Err(ScenarioError::invalid(
                format!("{path}.deadzone"),
                "must be non-negative",
            ));
        }
        if let AntiWindup::Clamp { limit: Some(l) } = self.antiwindup {
            if !(l > 0.0 && l.is_finite()) {
                return Err(ScenarioError::invalid(
                    format!("{path}.antiwindup.limit"),
                    "must be positive",
                ));
            }
        }
        Ok(())
    }

    /// Integral bound in effect at speed `v`, if any.
    pub fn integral_limit(&self, v: f64) -> Option<f64> {
        match self.antiwindup {
            AntiWindup::Clamp { limit: Some(l) } => Some(l),
            AntiWindup::Clamp { limit: None } => {
                let ki = self.ki.at(v);
                if ki > 0.0 {
                    Some(self.a_max / ki)
                } else {
                    None
                }
            }
            _ => None,
        }
    }
}

/// Gas/brake maps. `cmd_scale` divides the control input into a command,
/// `resp_scale` multiplies the command into realized acceleration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ActuatorModel {
    pub cmd_scale: Gain,
    pub resp_scale: f64,
    /// Optional first-order lag time constant between command and response, s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lag: Option<f64>,
}

impl Default for ActuatorModel {
    fn default() -> Self {
        Self {
            cmd_scale: Gain::Constant(3.0),
            resp_scale: 3.0,
            lag: None,
        }
    }
}

impl ActuatorModel {
    pub fn matched(scale: f64) -> Self {
        Self {
            cmd_scale: Gain::Constant(scale),
            resp_scale: scale,
            lag: None,
        }
    }

    pub fn new(cmd_scale: f64, resp_scale: f64) -> Self {
        Self {
            cmd_scale: Gain::Constant(cmd_scale),
            resp_scale,
            lag: None,
        }
    }

    /// resp_scale / cmd_scale at ego speed `v`: above one overshoots, below
    /// one undershoots.
    pub fn ratio_at(&self, v: f64) -> f64 {
        self.resp_scale / self.cmd_scale.at(v)
    }

    pub(crate) fn validate(&self, path: &str) -> Result<(), ScenarioError> {
        let p = format!("{path}.cmd_scale");
        self.cmd_scale.validate(&p)?;
        if !(self.cmd_scale.min_value() > 0.0) {
            return Err(ScenarioError::invalid(p, "must be positive"));
        }
        if !(self.resp_scale > 0.0 && self.resp_scale.is_finite()) {
            return Err(ScenarioError::invalid(
                format!("{path}.resp_scale"),
                "must be positive",
            ));
        }
        if let Some(tau) = self.lag {
            if !(tau > 0.0 && tau.is_finite()) {
                return Err(ScenarioError::invalid(
                    format!("{path}.lag"),
                    "time constant must be positive",
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// Variance of the position measurement noise, m².
    pub position_var: f64,
    /// Variance of the speed measurement noise, (m/s)².
    pub speed_var: f64,
    pub seed: u64,
    pub enabled: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            position_var: 0.25,
            speed_var: 0.04,
            seed: 0,
            enabled: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlannerConfig {
    Linear(LinearPlannerParams),
    Mpc(MpcParams),
}

impl PlannerConfig {
    pub fn is_mpc(&self) -> bool {
        matches!(self, PlannerConfig::Mpc(_))
    }

    /// Gap at which a follower driving at the lead's speed `v` is at rest
    /// relative to the planner.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        match self {
            PlannerConfig::Linear(p) => crate::planner::linear::desired_spacing(v, p),
            PlannerConfig::Mpc(p) => crate::planner::mpc::mpc_desired_spacing(v, v, p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub planner: PlannerConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
    #[serde(default)]
    pub actuator: ActuatorModel,
    /// Gap to the predecessor at t = 0, m. Defaults to the planner's
    /// equilibrium gap.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_gap: Option<f64>,
    /// Speed at t = 0, m/s. Defaults to the lead's initial speed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_speed: Option<f64>,
}

fn default_zero() -> f64 {
    0.0
}

/// Speed profile of the lead vehicle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LeadProfile {
    Constant {
        v0: f64,
    },
    /// `v0` up to and including `t0`, `v0 + dv` afterwards.
    Step {
        v0: f64,
        t0: f64,
        dv: f64,
    },
    /// `v0 + amplitude·sin(omega·(t − start))` after `start`, `v0` before.
    /// With `cycles`, the oscillation stops after that many periods and the
    /// speed stays at `v0`.
    Sinusoid {
        v0: f64,
        amplitude: f64,
        omega: f64,
        #[serde(default = "default_zero")]
        start: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        cycles: Option<f64>,
    },
    /// Linear interpolation through `(t, v)` points, flat outside.
    Piecewise {
        points: Vec<[f64; 2]>,
    },
    /// CSV with columns `t, v`; resolved into `Piecewise` when loading.
    External {
        path: String,
    },
}

const EVENT_EPS: f64 = 1e-9;

fn past_cycles(t: f64, start: f64, omega: f64, cycles: Option<f64>) -> bool {
    cycles.is_some_and(|c| omega * (t - start) >= c * std::f64::consts::TAU)
}

impl LeadProfile {
    pub fn speed(&self, t: f64) -> f64 {
        match self {
            LeadProfile::Constant { v0 } => *v0,
            LeadProfile::Step { v0, t0, dv } => {
                if t > t0 + EVENT_EPS {
                    v0 + dv
                } else {
                    *v0
                }
            }
            LeadProfile::Sinusoid {
                v0,
                amplitude,
                omega,
                start,
                cycles,
            } => {
                if t > *start && !past_cycles(t, *start, *omega, *cycles) {
                    v0 + amplitude * (omega * (t - start)).sin()
                } else {
                    *v0
                }
            }
            LeadProfile::Piecewise { points } => {
                let (ts, vs): (Vec<f64>, Vec<f64>) = points.iter().map(|p| (p[0], p[1])).unzip();
                interp_flat(&ts, &vs, t)
            }
            LeadProfile::External { .. } => f64::NAN,
        }
    }

    /// Analytic acceleration of the profile. Zero across speed jumps.
    pub fn accel(&self, t: f64) -> f64 {
        match self {
            LeadProfile::Constant { .. } | LeadProfile::Step { .. } => 0.0,
            LeadProfile::Sinusoid {
                amplitude,
                omega,
                start,
                cycles,
                ..
            } => {
                if t > *start && !past_cycles(t, *start, *omega, *cycles) {
                    amplitude * omega * (omega * (t - start)).cos()
                } else {
                    0.0
                }
            }
            LeadProfile::Piecewise { points } => {
                if points.len() < 2 || t < points[0][0] || t >= points[points.len() - 1][0] {
                    return 0.0;
                }
                let i = points.partition_point(|p| p[0] <= t);
                let (a, b) = (points[i - 1], points[i]);
                (b[1] - a[1]) / (b[0] - a[0])
            }
            LeadProfile::External { .. } => f64::NAN,
        }
    }

    /// Event time of the profile, if it has a natural one.
    pub fn event_time(&self) -> Option<f64> {
        match self {
            LeadProfile::Step { t0, .. } => Some(*t0),
            LeadProfile::Sinusoid { start, .. } => Some(*start),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |field: &str, reason: &str| ScenarioError::invalid(format!("lead.{field}"), reason);
        match self {
            LeadProfile::Constant { v0 } => {
                if !(*v0 >= 0.0 && v0.is_finite()) {
                    return Err(bad("v0", "must be finite and non-negative"));
                }
            }
            LeadProfile::Step { v0, t0, dv } => {
                if !(*v0 >= 0.0 && v0.is_finite()) {
                    return Err(bad("v0", "must be finite and non-negative"));
                }
                if !t0.is_finite() || !dv.is_finite() {
                    return Err(bad("dv", "must be finite"));
                }
                if v0 + dv < 0.0 {
                    return Err(bad("dv", "step would produce a negative speed"));
                }
            }
            LeadProfile::Sinusoid {
                v0,
                amplitude,
                omega,
                start,
                cycles,
            } => {
                if cycles.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
                    return Err(bad("cycles", "must be positive"));
                }
                if !(v0.is_finite() && amplitude.is_finite() && start.is_finite()) {
                    return Err(bad("v0", "must be finite"));
                }
                if !(*omega > 0.0 && omega.is_finite()) {
                    return Err(bad("omega", "must be positive"));
                }
                if *amplitude < 0.0 || v0 - amplitude < 0.0 {
                    return Err(bad("amplitude", "profile would produce a negative speed"));
                }
            }
            LeadProfile::Piecewise { points } => {
                if points.is_empty() {
                    return Err(bad("points", "at least one point is required"));
                }
                if points.windows(2).any(|w| !(w[1][0] > w[0][0])) {
                    return Err(bad("points", "times must be strictly increasing"));
                }
                if points.iter().any(|p| !(p[0].is_finite() && p[1].is_finite())) {
                    return Err(bad("points", "non-finite value"));
                }
                if points.iter().any(|p| p[1] < 0.0) {
                    return Err(bad("points", "negative speed"));
                }
            }
            LeadProfile::External { path } => {
                return Err(ScenarioError::invalid(
                    "lead.path",
                    format!("external trace {path:?} is not resolved; load the scenario from a file"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub timing: TimingConfig,
    pub lead: LeadProfile,
    /// Followers, nearest to the lead first.
    pub vehicles: Vec<VehicleConfig>,
    #[serde(default)]
    pub noise: NoiseConfig,
}

impl Scenario {
    /// Checks every invariant and fills omitted initial conditions.
    pub fn validate(mut self) -> Result<Scenario, ScenarioError> {
        self.timing.validate()?;
        self.lead.validate()?;
        if self.vehicles.is_empty() {
            return Err(ScenarioError::invalid("vehicles", "empty platoon: need at least one follower"));
        }
        let n = &self.noise;
        if !(n.position_var >= 0.0 && n.position_var.is_finite()) {
            return Err(ScenarioError::invalid("noise.position_var", "must be non-negative"));
        }
        if !(n.speed_var >= 0.0 && n.speed_var.is_finite()) {
            return Err(ScenarioError::invalid("noise.speed_var", "must be non-negative"));
        }
        let lead_v0 = self.lead.speed(0.0);
        let horizon_steps = self.timing.horizon_steps();
        for (i, veh) in self.vehicles.iter_mut().enumerate() {
            let path = format!("vehicles[{i}]");
            match &veh.planner {
                PlannerConfig::Linear(p) => p.validate(&format!("{path}.planner"))?,
                PlannerConfig::Mpc(p) => p.validate(&format!("{path}.planner"), horizon_steps)?,
            }
            veh.controller.validate(&format!("{path}.controller"))?;
            veh.actuator.validate(&format!("{path}.actuator"))?;
            let v0 = *veh.initial_speed.get_or_insert(lead_v0);
            if !(v0 >= 0.0 && v0.is_finite()) {
                return Err(ScenarioError::invalid(
                    format!("{path}.initial_speed"),
                    "must be finite and non-negative",
                ));
            }
            let gap = *veh.initial_gap.get_or_insert_with(|| veh.planner.equilibrium_gap(v0));
            if !(gap > 0.0 && gap.is_finite()) {
                return Err(ScenarioError::invalid(
                    format!("{path}.initial_gap"),
                    format!("initial spacing must be positive, got {gap}"),
                ));
            }
        }
        Ok(self)
    }

    pub fn follower_count(&self) -> usize {
        self.vehicles.len()
    }
}
