//! Finite-horizon MPC planner producing a target acceleration, and the
//! `a_start`/`v_start` surrogate recursion consumed by the PIF loop.
//!
//! The decision variables are the ego accelerations at each horizon step.
//! The ego rolls out as a point mass with explicit Euler at `dt_p`, the lead
//! follows a prediction with exponentially decaying acceleration. Each stage
//! carries four residuals (time-to-collision, distance, acceleration, jerk);
//! the solver minimizes their weighted sum of squares.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::model::{TimingConfig, VehicleState};

/// Exponent cap of the time-to-collision residual.
pub const TTC_EXPONENT_CAP: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Initial step length of the line search, as a fraction of the
    /// Gauss-Newton step.
    pub step_size: f64,
    /// Converged once no acceleration moves by more than this, m/s².
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step_size: 1.0,
            tolerance: 1e-7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcParams {
    pub w_ttc: f64,
    pub w_dist: f64,
    pub w_accel: f64,
    pub w_jerk: f64,
    /// Time headway of the MPC spacing policy, s.
    pub headway: f64,
    /// Decay parameter of the predicted lead acceleration.
    pub tau: f64,
    /// Gravity constant, m/s².
    pub gravity: f64,
    /// Lower bound on planned acceleration, m/s².
    pub a_min: f64,
    /// Upper bound on planned acceleration, m/s².
    pub a_max: f64,
    pub solver: SolverConfig,
}

impl Default for MpcParams {
    fn default() -> Self {
        Self {
            w_ttc: 5.0,
            w_dist: 0.1,
            w_accel: 10.0,
            w_jerk: 20.0,
            headway: 1.5,
            tau: 1.5,
            gravity: 9.81,
            a_min: -3.5,
            a_max: 1.5,
            solver: SolverConfig::default(),
        }
    }
}

impl MpcParams {
    pub(crate) fn validate(&self, path: &str, horizon_steps: usize) -> Result<(), ScenarioError> {
        for (name, w) in [
            ("w_ttc", self.w_ttc),
            ("w_dist", self.w_dist),
            ("w_accel", self.w_accel),
            ("w_jerk", self.w_jerk),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(ScenarioError::invalid(format!("{path}.{name}"), "must be non-negative"));
            }
        }
        if !(self.headway > 0.0 && self.headway.is_finite()) {
            return Err(ScenarioError::invalid(format!("{path}.headway"), "must be positive"));
        }
        if !(self.tau >= 0.0 && self.tau.is_finite()) {
            return Err(ScenarioError::invalid(format!("{path}.tau"), "must be non-negative"));
        }
        if !(self.gravity > 0.0 && self.gravity.is_finite()) {
            return Err(ScenarioError::invalid(format!("{path}.gravity"), "must be positive"));
        }
        if !(self.a_min < 0.0 && self.a_max > 0.0) {
            return Err(ScenarioError::invalid(format!("{path}.a_min"), "need a_min < 0 < a_max"));
        }
        if self.solver.max_iterations == 0 || !(self.solver.tolerance > 0.0) || !(self.solver.step_size > 0.0)
        {
            return Err(ScenarioError::invalid(format!("{path}.solver"), "bad solver settings"));
        }
        if horizon_steps < 2 {
            return Err(ScenarioError::invalid(
                "timing.mpc_horizon",
                "MPC needs at least two horizon steps",
            ));
        }
        Ok(())
    }
}

/// Lead trajectory over the horizon. Entry `k` is the state after `k + 1`
/// prediction steps.
pub fn predict_lead(lead: &VehicleState, p: &MpcParams, dt_p: f64, steps: usize) -> Vec<VehicleState> {
    let a0 = lead.a;
    let (mut x, mut v) = (lead.x, lead.v);
    let mut t = 0.0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = a0 * (-p.tau * t * t / 2.0).exp();
        x += v * dt_p;
        v = (v + a * dt_p).max(0.0);
        t += dt_p;
        out.push(VehicleState { x, v, a });
    }
    out
}

/// v_ego·H_t − (v_lead − v_ego)·H_t + (v_ego² − v_lead²)/(2G).
pub fn mpc_desired_spacing(v_ego: f64, v_lead: f64, p: &MpcParams) -> f64 {
    v_ego * p.headway - (v_lead - v_ego) * p.headway
        + (v_ego * v_ego - v_lead * v_lead) / (2.0 * p.gravity)
}

/// The four unweighted stage residuals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubCosts {
    pub ttc: f64,
    pub dist: f64,
    pub accel: f64,
    pub jerk: f64,
}

fn ttc_scale(v: f64) -> f64 {
    ((v + 0.5).sqrt() + 0.1) / 0.3
}

pub fn sub_costs(ego: &VehicleState, jerk: f64, s_lead: f64, s_des: f64) -> SubCosts {
    let v = ego.v.max(0.0);
    let gap_err = s_des - s_lead;
    let speed_factor = 0.1 * v + 1.0;
    SubCosts {
        ttc: (gap_err / ttc_scale(v)).min(TTC_EXPONENT_CAP).exp() - 1.0,
        dist: gap_err / (0.05 * v + 0.5),
        accel: ego.a * speed_factor,
        jerk: jerk * speed_factor,
    }
}

/// Weighted sum of the four sub-costs at one stage.
pub fn stage_cost(ego: &VehicleState, jerk: f64, s_lead: f64, s_des: f64, p: &MpcParams) -> f64 {
    let c = sub_costs(ego, jerk, s_lead, s_des);
    p.w_ttc * c.ttc + p.w_dist * c.dist + p.w_accel * c.accel + p.w_jerk * c.jerk
}

/// Weighted sum of squared sub-costs at one stage; this is what the solver
/// minimizes.
pub fn stage_objective(ego: &VehicleState, jerk: f64, s_lead: f64, s_des: f64, p: &MpcParams) -> f64 {
    let c = sub_costs(ego, jerk, s_lead, s_des);
    p.w_ttc * c.ttc * c.ttc
        + p.w_dist * c.dist * c.dist
        + p.w_accel * c.accel * c.accel
        + p.w_jerk * c.jerk * c.jerk
}

/// One MPC instance: ego state in a frame where the ego starts at x = 0,
/// predicted lead trajectory in the same frame.
#[derive(Debug, Clone)]
pub struct MpcProblem<'a> {
    pub v0: f64,
    /// Acceleration applied just before the horizon, used for the first jerk.
    pub prev_accel: f64,
    pub lead: Vec<VehicleState>,
    pub dt: f64,
    pub params: &'a MpcParams,
}

impl<'a> MpcProblem<'a> {
    /// Builds the problem from the measured gap and lead state.
    pub fn new(
        v_ego: f64,
        prev_accel: f64,
        gap: f64,
        lead: &VehicleState,
        dt: f64,
        steps: usize,
        params: &'a MpcParams,
    ) -> Self {
        let start = VehicleState { x: gap, ..*lead };
        Self {
            v0: v_ego.max(0.0),
            prev_accel,
            lead: predict_lead(&start, params, dt, steps),
            dt,
            params,
        }
    }

    pub fn steps(&self) -> usize {
        self.lead.len()
    }

    /// Ego states after each step (entry k is the state after k + 1 steps),
    /// with the acceleration that produced it.
    pub fn rollout(&self, accel: &[f64]) -> Vec<VehicleState> {
        let (mut x, mut v) = (0.0, self.v0);
        accel
            .iter()
            .map(|&a| {
                x += v * self.dt;
                v += a * self.dt;
                VehicleState { x, v, a }
            })
            .collect()
    }

    fn jerk(&self, accel: &[f64], k: usize) -> f64 {
        let prev = if k == 0 { self.prev_accel } else { accel[k - 1] };
        (accel[k] - prev) / self.dt
    }

    /// Objective of an acceleration sequence.
    pub fn cost(&self, accel: &[f64]) -> f64 {
        let ego = self.rollout(accel);
        ego.iter()
            .zip(&self.lead)
            .enumerate()
            .map(|(k, (e, l))| {
                let s_des = mpc_desired_spacing(e.v.max(0.0), l.v, self.params);
                stage_objective(e, self.jerk(accel, k), l.x - e.x, s_des, self.params)
            })
            .sum()
    }

    /// Sum of the linear stage costs, reported alongside the objective.
    pub fn linear_cost(&self, accel: &[f64]) -> f64 {
        let ego = self.rollout(accel);
        ego.iter()
            .zip(&self.lead)
            .enumerate()
            .map(|(k, (e, l))| {
                let s_des = mpc_desired_spacing(e.v.max(0.0), l.v, self.params);
                stage_cost(e, self.jerk(accel, k), l.x - e.x, s_des, self.params)
            })
            .sum()
    }

    /// Square-root-weighted residual vector and its Jacobian with respect to
    /// the accelerations. The objective is |r|².
    pub fn residuals(&self, accel: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = accel.len();
        let p = self.params;
        let sw = [p.w_ttc.sqrt(), p.w_dist.sqrt(), p.w_accel.sqrt(), p.w_jerk.sqrt()];
        let ego = self.rollout(accel);
        let mut r = DVector::zeros(4 * n);
        let mut jac = DMatrix::zeros(4 * n, n);
        let dt = self.dt;
        for k in 0..n {
            // stage k is the state after k + 1 steps
            let e = &ego[k];
            let l = &self.lead[k];
            let v = e.v.max(0.0);
            let s_des = mpc_desired_spacing(v, l.v, p);
            let gap_err = s_des - (l.x - e.x);
            let d_err_dv = 2.0 * p.headway + v / p.gravity;
            let jerk = self.jerk(accel, k);
            let c = sub_costs(e, jerk, l.x - e.x, s_des);

            // partials of each residual w.r.t. (x, v) at this stage
            let scale = ttc_scale(v);
            let u = gap_err / scale;
            let (ttc_dx, ttc_dv) = if u < TTC_EXPONENT_CAP {
                let ex = u.exp();
                let dscale = 1.0 / (0.6 * (v + 0.5).sqrt());
                (ex / scale, ex * (d_err_dv / scale - gap_err * dscale / (scale * scale)))
            } else {
                (0.0, 0.0)
            };
            let den = 0.05 * v + 0.5;
            let dist_dx = 1.0 / den;
            let dist_dv = d_err_dv / den - gap_err * 0.05 / (den * den);
            let speed_factor = 0.1 * v + 1.0;
            let accel_dv = 0.1 * accel[k];
            let jerk_dv = 0.1 * jerk;

            let rows = [
                (c.ttc, ttc_dx, ttc_dv),
                (c.dist, dist_dx, dist_dv),
                (c.accel, 0.0, accel_dv),
                (c.jerk, 0.0, jerk_dv),
            ];
            for (q, &(val, dx, dv)) in rows.iter().enumerate() {
                let row = 4 * k + q;
                r[row] = sw[q] * val;
                // x_{k+1} depends on a_i, i < k, with weight dt²(k − i);
                // v_{k+1} on a_i, i ≤ k, with weight dt.
                for i in 0..=k {
                    let dxi = dt * dt * (k - i) as f64;
                    jac[(row, i)] = sw[q] * (dx * dxi + dv * dt);
                }
            }
            jac[(4 * k + 2, k)] += sw[2] * speed_factor;
            jac[(4 * k + 3, k)] += sw[3] * speed_factor / dt;
            if k > 0 {
                jac[(4 * k + 3, k - 1)] -= sw[3] * speed_factor / dt;
            }
        }
        (r, jac)
    }

    /// Gradient of the objective.
    pub fn gradient(&self, accel: &[f64]) -> Vec<f64> {
        let (r, jac) = self.residuals(accel);
        (jac.transpose() * r * 2.0).iter().copied().collect()
    }

    /// Maps a sequence into the feasible set: box bounds on each
    /// acceleration, then the smallest raise that keeps every rolled-out
    /// speed non-negative.
    pub fn project(&self, accel: &mut [f64]) {
        let p = self.params;
        let mut v = self.v0;
        for a in accel.iter_mut() {
            *a = a.clamp(p.a_min, p.a_max);
            if v + *a * self.dt < 0.0 {
                *a = -v / self.dt;
            }
            v = (v + *a * self.dt).max(0.0);
        }
    }

    pub fn is_feasible(&self, accel: &[f64]) -> bool {
        let p = self.params;
        accel.iter().all(|a| (p.a_min..=p.a_max).contains(a))
            && self.rollout(accel).iter().all(|e| e.v >= -1e-12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcSolution {
    /// First element of the optimized sequence.
    pub a_target: f64,
    pub plan: Vec<f64>,
    pub cost: f64,
    /// Objective of the warm start the solver began from.
    pub initial_cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value after every accepted iterate, starting point first.
    pub cost_history: Vec<f64>,
}

impl MpcSolution {
    pub fn cost_nonincreasing(&self) -> bool {
        self.cost_history.windows(2).all(|w| w[1] <= w[0])
    }
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn line_search(
    problem: &MpcProblem,
    x: &[f64],
    cost: f64,
    grad: &[f64],
    dir: &[f64],
    step0: f64,
) -> Option<(Vec<f64>, f64)> {
    let mut t = step0;
    for _ in 0..MAX_BACKTRACKS {
        let mut cand: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + t * d).collect();
        problem.project(&mut cand);
        let decrease: f64 = grad.iter().zip(cand.iter().zip(x)).map(|(g, (c, a))| g * (c - a)).sum();
        let c = problem.cost(&cand);
        if c.is_finite() && c <= cost && c <= cost + ARMIJO * decrease.min(0.0) {
            return Some((cand, c));
        }
        t *= 0.5;
    }
    None
}

/// Projected descent on the acceleration sequence. Steps follow the
/// Gauss-Newton direction of the least-squares objective, projected onto the
/// feasible set; plain projected gradient is the fallback. Every accepted
/// iterate lowers (or keeps) the objective.
pub fn solve(problem: &MpcProblem, warm_start: &[f64]) -> MpcSolution {
    let n = problem.steps();
    let cfg = &problem.params.solver;
    let mut warm = warm_start.to_vec();
    warm.resize(n, warm_start.last().copied().unwrap_or(0.0));
    problem.project(&mut warm);
    let warm_cost = problem.cost(&warm);
    let mut zeros = vec![0.0; n];
    problem.project(&mut zeros);
    let zero_cost = problem.cost(&zeros);
    let (mut x, mut cost) = if zero_cost < warm_cost {
        (zeros, zero_cost)
    } else {
        (warm, warm_cost)
    };
    let initial_cost = cost;
    let mut history = vec![cost];
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let (r, jac) = problem.residuals(&x);
        let jt = jac.transpose();
        let grad_v = &jt * &r * 2.0;
        let grad: Vec<f64> = grad_v.iter().copied().collect();
        let mut hess = &jt * &jac * 2.0;
        let damping = 1e-9 * (1.0 + hess.trace());
        for i in 0..n {
            hess[(i, i)] += damping;
        }
        let mut step = None;
        if let Some(chol) = hess.clone().cholesky() {
            let dir: Vec<f64> = chol.solve(&(-&grad_v)).iter().copied().collect();
            step = line_search(problem, &x, cost, &grad, &dir, cfg.step_size);
        }
        if step.is_none() {
            let lipschitz = hess.norm().max(1e-12);
            let dir: Vec<f64> = grad.iter().map(|g| -g / lipschitz).collect();
            step = line_search(problem, &x, cost, &grad, &dir, 1.0);
        }
        let Some((next, next_cost)) = step else {
            // no descent along either direction: stationary within precision
            converged = true;
            break;
        };
        let moved = next.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        x = next;
        cost = next_cost;
        history.push(cost);
        if moved < cfg.tolerance {
            converged = true;
            break;
        }
    }

    MpcSolution {
        a_target: x[0],
        plan: x,
        cost,
        initial_cost,
        iterations,
        converged,
        cost_history: history,
    }
}

/// Surrogate start states advanced once per planning period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartState {
    pub v_start: f64,
    pub a_start: f64,
}

impl StartState {
    /// State at engagement.
    pub fn engage(v_ego: f64, a_ego: f64) -> Self {
        Self {
            v_start: v_ego,
            a_start: a_ego,
        }
    }
}

/// a_start moves a fraction plan_dt/dt_p toward a_target; v_start then
/// integrates the mean of a_target and the new a_start over plan_dt.
pub fn update_start_states(s: StartState, a_target: f64, timing: &TimingConfig) -> StartState {
    let a_start = s.a_start + timing.plan_dt / timing.horizon_dt * (a_target - s.a_start);
    let v_start = s.v_start + timing.plan_dt * (a_target + a_start) / 2.0;
    StartState { v_start, a_start }
}

/// MPC planner with warm-start memory.
#[derive(Debug, Clone)]
pub struct MpcPlanner {
    pub params: MpcParams,
    steps: usize,
    dt_p: f64,
    plan_dt: f64,
    prev_plan: Vec<f64>,
    prev_a_target: f64,
}

impl MpcPlanner {
    pub fn new(params: MpcParams, timing: &TimingConfig) -> Self {
        let steps = timing.horizon_steps();
        Self {
            params,
            steps,
            dt_p: timing.horizon_dt,
            plan_dt: timing.plan_dt,
            prev_plan: vec![0.0; steps],
            prev_a_target: 0.0,
        }
    }

    pub fn reset(&mut self, a_ego: f64) {
        self.prev_plan = vec![0.0; self.steps];
        self.prev_a_target = a_ego;
    }

    /// Previous plan advanced by one planning period, held at its last value.
    fn shifted_plan(&self) -> Vec<f64> {
        let last = self.prev_plan.len() - 1;
        (0..self.steps)
            .map(|k| {
                let pos = (k as f64 * self.dt_p + self.plan_dt) / self.dt_p;
                let i = pos.floor() as usize;
                if i >= last {
                    self.prev_plan[last]
                } else {
                    let f = pos - i as f64;
                    self.prev_plan[i] * (1.0 - f) + self.prev_plan[i + 1] * f
                }
            })
            .collect()
    }

    pub fn plan(&mut self, v_ego: f64, gap: f64, lead: &VehicleState) -> MpcSolution {
        let problem = MpcProblem::new(
            v_ego,
            self.prev_a_target,
            gap,
            lead,
            self.dt_p,
            self.steps,
            &self.params,
        );
        let warm = self.shifted_plan();
        let sol = solve(&problem, &warm);
        self.prev_plan = sol.plan.clone();
        self.prev_a_target = sol.a_target;
        sol
    }
}
