//! Deterministic two-rate adaptive cruise control simulator for platoons,
//! with string-stability metrics.

// Validation writes `!(x > 0.0)` on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuator;
pub mod error;
pub mod io;
pub mod lowlevel;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod planner;
pub mod sim;
pub mod svg;
pub mod sweep;
pub mod trace;

pub use error::{MetricsError, ScenarioError, SimError, SweepError, TraceError};
pub use model::{
    ActuatorModel, AntiWindup, ControllerConfig, Gain, LeadProfile, NoiseConfig, PlannerConfig, Scenario,
    TimingConfig, VehicleConfig, VehicleState,
};
pub use io::{ingest_external_trace, load_scenario};
pub use sim::run_platoon;
pub use sweep::{run_sweep, SweepSummary};
pub use trace::PlatoonTrace;
