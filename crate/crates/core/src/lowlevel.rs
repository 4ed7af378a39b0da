//! 100 Hz setpoint generation and the PI/PIF control law.

use crate::model::{AntiWindup, ControllerConfig};
use crate::planner::mpc::StartState;

/// Per-vehicle state of the low-level loop.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    /// Speed setpoint, m/s.
    pub v_pid: f64,
    /// Acceleration setpoint, m/s². Stays zero behind a linear planner.
    pub a_pid: f64,
    /// Accumulated speed error, m.
    pub integral: f64,
    /// Actuator command issued on the previous tick.
    pub last_gb: f64,
}

impl PidState {
    pub fn engage(v_ego: f64) -> Self {
        Self {
            v_pid: v_ego,
            ..Default::default()
        }
    }
}

/// Individual contributions of one control evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlTerms {
    /// Speed error after the deadzone.
    pub error: f64,
    pub p: f64,
    pub i: f64,
    pub f: f64,
    pub control: f64,
}

/// Pulls v_pid back to within `overshoot_allowance` of v_ego when it has run
/// ahead of the ego and the target lies on the near side.
pub fn overshoot_snap(v_pid: f64, v_target: f64, v_ego: f64, oa: f64) -> f64 {
    if v_pid > v_ego + oa && v_target < v_pid {
        v_target.max(v_ego + oa)
    } else if v_pid < v_ego - oa && v_target > v_pid {
        v_target.min(v_ego - oa)
    } else {
        v_pid
    }
}

/// Moves v_pid toward v_target by at most a_max·dt up or a_min·dt down,
/// landing on the target when it is within reach.
pub fn rate_limit(v_pid: f64, v_target: f64, a_max: f64, a_min: f64, dt: f64) -> f64 {
    if v_target > v_pid + a_max * dt {
        v_pid + a_max * dt
    } else if v_target < v_pid + a_min * dt {
        v_pid + a_min * dt
    } else {
        v_target
    }
}

/// One control tick of the speed setpoint behind a linear planner: the
/// overshoot snap-back first, then the rate limit.
pub fn step_vpid_linear(v_pid: f64, v_target: f64, v_ego: f64, c: &ControllerConfig, dt: f64) -> f64 {
    let snapped = overshoot_snap(v_pid, v_target, v_ego, c.overshoot_allowance);
    rate_limit(snapped, v_target, c.a_max, c.a_min, dt)
}

/// Setpoints `elapsed` seconds after the last planning tick behind an MPC
/// planner: a_pid ramps linearly from a_start toward a_target over dt_p and
/// v_pid is its trapezoidal integral from v_start.
pub fn step_setpoints_mpc(start: StartState, a_target: f64, elapsed: f64, dt_p: f64) -> (f64, f64) {
    let a_pid = start.a_start + elapsed * (a_target - start.a_start) / dt_p;
    let v_pid = start.v_start + elapsed * (a_pid + start.a_start) / 2.0;
    (a_pid, v_pid)
}

/// Zero inside `[-dz, dz]`, shifted toward zero by `dz` outside, so the
/// error stays continuous at the band edge.
pub fn apply_deadzone(e: f64, dz: f64) -> f64 {
    if e > dz {
        e - dz
    } else if e < -dz {
        e + dz
    } else {
        0.0
    }
}

/// PI/PIF law kp·e + ki·∫e + kf·a_pid with e = v_pid − v_ego after the
/// deadzone. Updates the integral in place according to the anti-windup mode.
pub fn pif_control(state: &mut PidState, v_ego: f64, c: &ControllerConfig, dt: f64) -> ControlTerms {
    let e = apply_deadzone(state.v_pid - v_ego, c.deadzone);
    let next = state.integral + e * dt;
    state.integral = match c.antiwindup {
        AntiWindup::None => next,
        AntiWindup::Clamp { .. } => match c.integral_limit(v_ego) {
            Some(lim) => next.clamp(-lim, lim),
            None => next,
        },
        AntiWindup::Freeze => {
            let saturated = state.last_gb.abs() >= 1.0 && e * state.last_gb > 0.0;
            if saturated {
                state.integral
            } else {
                next
            }
        }
    };
    let p = c.kp.at(v_ego) * e;
    let i = c.ki.at(v_ego) * state.integral;
    let f = c.kf.at(v_ego) * state.a_pid;
    ControlTerms {
        error: e,
        p,
        i,
        f,
        control: p + i + f,
    }
}
