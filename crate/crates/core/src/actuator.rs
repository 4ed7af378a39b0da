//! Control input → gas/brake command → realized acceleration.

use crate::model::ActuatorModel;

/// gb = clamp(control / cmd_scale(v_ego), −1, 1). Negative values brake.
pub fn compute_gb(control: f64, v_ego: f64, m: &ActuatorModel) -> f64 {
    (control / m.cmd_scale.at(v_ego)).clamp(-1.0, 1.0)
}

/// Steady-state acceleration produced by a command.
pub fn gb2accel(gb: f64, m: &ActuatorModel) -> f64 {
    m.resp_scale * gb
}

/// Actuator with the optional first-order lag state.
#[derive(Debug, Clone)]
pub struct Actuator {
    pub model: ActuatorModel,
    accel: f64,
}

impl Actuator {
    pub fn new(model: ActuatorModel, a0: f64) -> Self {
        Self { model, accel: a0 }
    }

    /// Realized acceleration for command `gb` held over `dt`.
    pub fn respond(&mut self, gb: f64, dt: f64) -> f64 {
        let target = gb2accel(gb, &self.model);
        self.accel = match self.model.lag {
            None => target,
            Some(tau) => self.accel + (target - self.accel) * (dt / tau).min(1.0),
        };
        self.accel
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn command_examples() {
        let m = ActuatorModel::new(3.0, 3.0);
        assert_eq!(compute_gb(0.0, 10.0, &m), 0.0);
        assert_relative_eq!(compute_gb(1.0, 10.0, &m), 1.0 / 3.0);
        assert_eq!(compute_gb(10.0, 10.0, &m), 1.0);
        assert_eq!(compute_gb(-10.0, 10.0, &m), -1.0);
    }

    #[test]
    fn response_examples() {
        let m = ActuatorModel::new(3.0, 3.0);
        assert_relative_eq!(gb2accel(0.2, &m), 0.6, epsilon = 1e-15);
        assert_eq!(gb2accel(0.0, &m), 0.0);
    }

    #[test]
    fn undershooting_chain() {
        let m = ActuatorModel::new(5.0, 3.0);
        let a = gb2accel(compute_gb(1.0, 10.0, &m), &m);
        assert_relative_eq!(a, 0.6, epsilon = 1e-15);
        assert!(a < 1.0);
        assert!(m.ratio_at(10.0) < 1.0);
    }

    #[test]
    fn lag_approaches_target() {
        let mut m = ActuatorModel::new(3.0, 3.0);
        m.lag = Some(0.5);
        let mut act = Actuator::new(m, 0.0);
        let a1 = act.respond(1.0 / 3.0, 0.01);
        assert_relative_eq!(a1, 0.02, epsilon = 1e-12);
        for _ in 0..1000 {
            act.respond(1.0 / 3.0, 0.01);
        }
        assert_relative_eq!(act.respond(1.0 / 3.0, 0.01), 1.0, epsilon = 1e-6);
    }

    proptest! {
        #[test]
        fn matched_chain_is_identity(scale in 0.5f64..6.0, frac in -1.0f64..1.0) {
            let m = ActuatorModel::matched(scale);
            let control = frac * scale;
            let a = gb2accel(compute_gb(control, 15.0, &m), &m);
            prop_assert!((a - control).abs() <= 1e-12 * scale);
        }

        #[test]
        fn overshoot_classification(cmd in 0.5f64..6.0, resp in 0.5f64..6.0, frac in 0.01f64..0.99) {
            let m = ActuatorModel::new(cmd, resp);
            let control = frac * cmd;
            let a = gb2accel(compute_gb(control, 15.0, &m), &m);
            prop_assert_eq!(a > control, resp > cmd);
        }
    }
}
