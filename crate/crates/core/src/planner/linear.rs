//! Constant-time-headway linear planner producing a target speed.

use serde::{Deserialize, Serialize};

use crate::error::ScenarioError;
use crate::model::Gain;

/// Which speed the desired spacing is built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SpacingReference {
    #[default]
    Lead,
    Ego,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LinearPlannerParams {
    /// Jam spacing, m.
    pub s_j: f64,
    /// Desired time headway, s.
    pub headway: f64,
    /// Spacing-error gain, 1/s, possibly scheduled over ego speed.
    pub k_v: Gain,
    /// Largest increase of v_target per second, m/s².
    pub a_max_plan: f64,
    /// Largest decrease of v_target per second (negative), m/s².
    pub a_min_plan: f64,
    pub spacing_reference: SpacingReference,
}

impl Default for LinearPlannerParams {
    fn default() -> Self {
        Self {
            s_j: 2.0,
            headway: 1.5,
            k_v: Gain::Constant(0.3),
            a_max_plan: 1.5,
            a_min_plan: -3.5,
            spacing_reference: SpacingReference::Lead,
        }
    }
}

impl LinearPlannerParams {
    pub(crate) fn validate(&self, path: &str) -> Result<(), ScenarioError> {
        if !(self.s_j > 0.0 && self.s_j.is_finite()) {
            return Err(ScenarioError::invalid(format!("{path}.s_j"), "must be positive"));
        }
        if !(self.headway > 0.0 && self.headway.is_finite()) {
            return Err(ScenarioError::invalid(format!("{path}.headway"), "must be positive"));
        }
        let kp = format!("{path}.k_v");
        self.k_v.validate(&kp)?;
        if !(self.k_v.min_value() > 0.0) {
            return Err(ScenarioError::invalid(kp, "must be positive"));
        }
        if !(self.a_max_plan > 0.0 && self.a_min_plan < 0.0)
            || !self.a_max_plan.is_finite()
            || !self.a_min_plan.is_finite()
        {
            return Err(ScenarioError::invalid(
                format!("{path}.a_min_plan"),
                "need a_min_plan < 0 < a_max_plan",
            ));
        }
        let product = self.k_v.max_value() * self.headway;
        if product > 2.0 {
            log::warn!(
                "{path}: k_v·H_t = {product:.3} exceeds 2; the planner alone is not string stable"
            );
        }
        Ok(())
    }
}

/// s_j + H_t·v, where `v` is the reference speed (lead speed by default).
pub fn desired_spacing(v: f64, p: &LinearPlannerParams) -> f64 {
    p.s_j + p.headway * v
}

/// Unclamped target speed (s_lead − s_des)·k_v + v_lead.
pub fn raw_target_speed(s_lead: f64, v_lead: f64, v_ego: f64, p: &LinearPlannerParams) -> f64 {
    let v_ref = match p.spacing_reference {
        SpacingReference::Lead => v_lead,
        SpacingReference::Ego => v_ego,
    };
    (s_lead - desired_spacing(v_ref, p)) * p.k_v.at(v_ego) + v_lead
}

/// Target speed clamped at zero and, when a previous target exists,
/// rate-limited to [a_min_plan, a_max_plan]·plan_dt around it.
pub fn plan_target_speed(
    s_lead: f64,
    v_lead: f64,
    v_ego: f64,
    previous: Option<f64>,
    plan_dt: f64,
    p: &LinearPlannerParams,
) -> f64 {
    let mut v = raw_target_speed(s_lead, v_lead, v_ego, p).max(0.0);
    if let Some(prev) = previous {
        v = v.clamp(prev + p.a_min_plan * plan_dt, prev + p.a_max_plan * plan_dt);
    }
    v.max(0.0)
}

/// Planner instance carrying the previous target for rate limiting.
#[derive(Debug, Clone)]
pub struct LinearPlanner {
    pub params: LinearPlannerParams,
    previous: Option<f64>,
}

impl LinearPlanner {
    pub fn new(params: LinearPlannerParams) -> Self {
        Self {
            params,
            previous: None,
        }
    }

    /// Seeds the rate limiter, typically with the ego speed at engagement.
    pub fn reset(&mut self, v_target: f64) {
        self.previous = Some(v_target);
    }

    pub fn plan(&mut self, s_lead: f64, v_lead: f64, v_ego: f64, plan_dt: f64) -> f64 {
        let v = plan_target_speed(s_lead, v_lead, v_ego, self.previous, plan_dt, &self.params);
        self.previous = Some(v);
        v
    }
}
