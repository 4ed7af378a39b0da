//! Deterministic two-rate closed loop for a platoon behind a scripted lead.

use crate::actuator::{compute_gb, Actuator};
use crate::error::SimError;
use crate::lowlevel::{pif_control, step_setpoints_mpc, step_vpid_linear, PidState};
use crate::model::{ControllerConfig, PlannerConfig, Scenario, TimingConfig, VehicleState};
use crate::noise::{NoiseStream, Quantity};
use crate::planner::linear::LinearPlanner;
use crate::planner::mpc::{update_start_states, MpcPlanner, StartState};
use crate::trace::{Collision, PlatoonTrace, SolverRecord, TraceRow, VehicleTrace};

enum Planner {
    Linear {
        planner: LinearPlanner,
        v_target: f64,
    },
    Mpc {
        planner: Box<MpcPlanner>,
        a_target: f64,
        /// Start states advanced at every planning tick.
        next: StartState,
        /// Start states in force for the current planning period.
        current: StartState,
    },
}

struct Follower {
    planner: Planner,
    controller: ControllerConfig,
    pid: PidState,
    actuator: Actuator,
    noise_position: NoiseStream,
    noise_speed: NoiseStream,
}

impl Follower {
    fn new(s: &Scenario, index: usize, v0: f64) -> Self {
        let cfg = &s.vehicles[index];
        let id = index + 1;
        let planner = match &cfg.planner {
            PlannerConfig::Linear(p) => {
                let mut planner = LinearPlanner::new(p.clone());
                planner.reset(v0);
                Planner::Linear {
                    planner,
                    v_target: v0,
                }
            }
            PlannerConfig::Mpc(p) => {
                let mut planner = MpcPlanner::new(p.clone(), &s.timing);
                planner.reset(0.0);
                let start = StartState::engage(v0, 0.0);
                Planner::Mpc {
                    planner: Box::new(planner),
                    a_target: 0.0,
                    next: start,
                    current: start,
                }
            }
        };
        Self {
            planner,
            controller: cfg.controller.clone(),
            pid: PidState::engage(v0),
            actuator: Actuator::new(cfg.actuator.clone(), 0.0),
            noise_position: NoiseStream::new(&s.noise, id, Quantity::Position),
            noise_speed: NoiseStream::new(&s.noise, id, Quantity::Speed),
        }
    }
}

fn check(value: f64, tick: usize, vehicle: usize, quantity: &'static str) -> Result<f64, SimError> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::NonFinite {
            tick,
            vehicle,
            quantity,
        })
    }
}

/// Runs a scenario to completion or to the first collision.
///
/// Every control tick logs the state at the start of the tick together with
/// the control evaluated on it, then integrates
/// `v ← max(0, v + a·dt)`, `x ← x + v·dt`. Followers plan on their
/// predecessor's state at planning ticks only.
pub fn run_platoon(scenario: &Scenario) -> Result<PlatoonTrace, SimError> {
    let s = scenario.clone().validate()?;
    let timing: TimingConfig = s.timing;
    let dt = timing.control_dt;
    let per_plan = timing.steps_per_plan();
    let ticks = timing.total_ticks();
    let n = s.vehicles.len();

    let mut states = vec![VehicleState::default(); n + 1];
    states[0].v = s.lead.speed(0.0);
    states[0].a = s.lead.accel(0.0);
    let total_gap: f64 = s.vehicles.iter().map(|v| v.initial_gap.unwrap_or_default()).sum();
    states[0].x = total_gap;
    for (i, cfg) in s.vehicles.iter().enumerate() {
        let pred_x = states[i].x;
        states[i + 1] = VehicleState::new(
            pred_x - cfg.initial_gap.unwrap_or_default(),
            cfg.initial_speed.unwrap_or_default(),
            0.0,
        );
    }
    let mut followers: Vec<Follower> = (0..n).map(|i| Follower::new(&s, i, states[i + 1].v)).collect();

    let mut trace = PlatoonTrace {
        control_dt: dt,
        plan_dt: timing.plan_dt,
        horizon_dt: timing.horizon_dt,
        vehicles: (0..=n)
            .map(|id| VehicleTrace {
                id,
                rows: Vec::with_capacity(ticks),
            })
            .collect(),
        solver: Vec::new(),
        collision: None,
    };

    for tick in 0..ticks {
        let t = tick as f64 * dt;
        states[0].v = s.lead.speed(t);
        states[0].a = s.lead.accel(t);
        let snapshot = states.clone();
        trace.vehicles[0].rows.push(TraceRow {
            tick,
            t,
            state: snapshot[0],
            ..Default::default()
        });

        for (i, f) in followers.iter_mut().enumerate() {
            let id = i + 1;
            let me = snapshot[id];
            let pred = snapshot[id - 1];
            let plan_tick = tick % per_plan == 0;
            let mut row = TraceRow {
                tick,
                t,
                ..Default::default()
            };

            match &mut f.planner {
                Planner::Linear { planner, v_target } => {
                    if plan_tick {
                        let gap = f.noise_position.apply(pred.x) - me.x;
                        let v_lead = f.noise_speed.apply(pred.v).max(0.0);
                        *v_target = check(planner.plan(gap, v_lead, me.v, timing.plan_dt), tick, id, "v_target")?;
                    }
                    f.pid.v_pid = step_vpid_linear(f.pid.v_pid, *v_target, me.v, &f.controller, dt);
                    f.pid.a_pid = 0.0;
                    row.v_target = Some(*v_target);
                }
                Planner::Mpc {
                    planner,
                    a_target,
                    next,
                    current,
                } => {
                    if plan_tick {
                        let gap = f.noise_position.apply(pred.x) - me.x;
                        let lead = VehicleState {
                            x: 0.0,
                            v: f.noise_speed.apply(pred.v).max(0.0),
                            a: pred.a,
                        };
                        let sol = planner.plan(me.v, gap, &lead);
                        *a_target = check(sol.a_target, tick, id, "a_target")?;
                        trace.solver.push(SolverRecord {
                            vehicle: id,
                            tick,
                            iterations: sol.iterations,
                            converged: sol.converged,
                            initial_cost: sol.initial_cost,
                            cost: sol.cost,
                            cost_nonincreasing: sol.cost_nonincreasing(),
                        });
                        *current = *next;
                        *next = update_start_states(*current, *a_target, &timing);
                    }
                    let elapsed = (tick % per_plan) as f64 * dt;
                    let (a_pid, v_pid) = step_setpoints_mpc(*current, *a_target, elapsed, timing.horizon_dt);
                    f.pid.a_pid = a_pid;
                    f.pid.v_pid = v_pid;
                    row.a_target = Some(*a_target);
                    row.a_pid = Some(a_pid);
                    row.v_start = Some(current.v_start);
                    row.a_start = Some(current.a_start);
                }
            }

            let terms = pif_control(&mut f.pid, me.v, &f.controller, dt);
            let control = check(terms.control, tick, id, "control")?;
            let gb = compute_gb(control, me.v, &f.actuator.model);
            f.pid.last_gb = gb;
            let accel = check(f.actuator.respond(gb, dt), tick, id, "acceleration")?;

            row.state = VehicleState { a: accel, ..me };
            row.v_pid = Some(f.pid.v_pid);
            row.p_term = Some(terms.p);
            row.i_term = Some(terms.i);
            row.f_term = Some(terms.f);
            row.control = Some(control);
            row.gb = Some(gb);
            trace.vehicles[id].rows.push(row);

            let v = (me.v + accel * dt).max(0.0);
            states[id] = VehicleState {
                x: me.x + v * dt,
                v,
                a: accel,
            };
        }

        let v_lead = s.lead.speed(t + dt);
        states[0].x += v_lead * dt;
        states[0].v = v_lead;

        for id in 1..=n {
            let gap = states[id - 1].x - states[id].x;
            check(gap, tick, id, "gap")?;
            if gap <= 0.0 {
                trace.collision = Some(Collision {
                    tick,
                    t: t + dt,
                    vehicle: id,
                    gap,
                });
                return Ok(trace);
            }
        }
    }
    Ok(trace)
}
