use accsim_core::planner::linear::LinearPlannerParams;
use accsim_core::planner::mpc::MpcParams;
use accsim_core::*;
use proptest::prelude::*;

fn linear(kp: f64, ki: f64, cmd: f64, resp: f64) -> VehicleConfig {
    VehicleConfig {
        planner: PlannerConfig::Linear(LinearPlannerParams::default()),
        controller: ControllerConfig {
            kp: Gain::Constant(kp),
            ki: Gain::Constant(ki),
            kf: Gain::Constant(0.0),
            ..Default::default()
        },
        actuator: ActuatorModel::new(cmd, resp),
        initial_gap: None,
        initial_speed: None,
    }
}

fn mpc() -> VehicleConfig {
    VehicleConfig {
        planner: PlannerConfig::Mpc(MpcParams::default()),
        controller: ControllerConfig::default(),
        actuator: ActuatorModel::default(),
        initial_gap: None,
        initial_speed: None,
    }
}

fn step_scenario(vehicles: Vec<VehicleConfig>, duration: f64) -> Scenario {
    Scenario {
        name: None,
        timing: TimingConfig {
            duration,
            ..Default::default()
        },
        lead: LeadProfile::Step {
            v0: 20.0,
            t0: 10.0,
            dv: -5.0,
        },
        vehicles,
        noise: NoiseConfig::default(),
    }
}

fn min_speed(trace: &PlatoonTrace, id: usize) -> f64 {
    trace.series(id, |r| r.state.v).iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
}

#[test]
fn fast_gains_damp_the_step_down_the_platoon() {
    let trace = run_platoon(&step_scenario(vec![linear(2.0, 0.5, 3.0, 3.0); 5], 60.0)).unwrap();
    assert!(trace.collision.is_none());
    for id in 1..=5 {
        let (pred, me) = (min_speed(&trace, id - 1), min_speed(&trace, id));
        assert!(me >= pred - 1e-9, "vehicle {id}: min {me} below predecessor's {pred}");
    }
}

#[test]
fn undershooting_actuator_amplifies_somewhere() {
    let trace = run_platoon(&step_scenario(vec![linear(0.8, 0.2, 3.0, 1.8); 5], 60.0)).unwrap();
    assert!(trace.collision.is_none());
    let excursion = |id| {
        let v = trace.series(id, |r| r.state.v);
        let hi = v.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let lo = v.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        hi - lo
    };
    assert!((1..=5).any(|id| excursion(id) > excursion(id - 1)));
}

#[test]
fn planner_outputs_change_only_at_plan_ticks() {
    let mut vehicles = vec![linear(1.0, 0.3, 3.0, 3.0); 2];
    vehicles.push(mpc());
    let trace = run_platoon(&step_scenario(vehicles, 20.0)).unwrap();
    assert_eq!(trace.steps_per_plan(), 5);
    for id in 1..=3 {
        let rows = &trace.vehicle(id).unwrap().rows;
        for w in rows.windows(2) {
            if w[1].tick % 5 != 0 {
                assert_eq!(w[1].v_target, w[0].v_target, "vehicle {id} tick {}", w[1].tick);
                assert_eq!(w[1].a_target, w[0].a_target, "vehicle {id} tick {}", w[1].tick);
                assert_eq!(w[1].v_start, w[0].v_start);
            }
        }
    }
    // MPC followers solve exactly once per plan tick.
    assert_eq!(trace.solver.len(), trace.ticks() / 5);
}

#[test]
fn position_is_the_euler_sum_of_speeds() {
    let trace = run_platoon(&step_scenario(vec![linear(1.0, 0.3, 3.0, 2.4); 3], 30.0)).unwrap();
    let dt = trace.control_dt;
    for v in &trace.vehicles {
        let mut x = v.rows[0].state.x;
        for r in &v.rows[1..] {
            x += r.state.v * dt;
            assert_eq!(x, r.state.x, "vehicle {} tick {}", v.id, r.tick);
        }
    }
}

#[test]
fn p_only_matched_actuator_realizes_the_control() {
    let trace = run_platoon(&step_scenario(vec![linear(0.8, 0.0, 3.0, 3.0); 2], 30.0)).unwrap();
    for id in 1..=2 {
        for r in &trace.vehicle(id).unwrap().rows {
            let control = 0.8 * (r.v_pid.unwrap() - r.state.v);
            if control.abs() < 3.0 {
                assert!((r.state.a - control).abs() < 1e-12, "tick {}", r.tick);
            }
        }
    }
}

#[test]
fn mixed_platoon_runs() {
    let vehicles = vec![linear(1.0, 0.3, 3.0, 3.0), mpc(), linear(1.0, 0.3, 5.0, 3.0)];
    let mut s = step_scenario(vehicles, 40.0);
    s.lead = LeadProfile::Step {
        v0: 10.0,
        t0: 10.0,
        dv: -2.0,
    };
    let trace = run_platoon(&s).unwrap();
    assert!(trace.collision.is_none());
    assert!(trace.vehicle(1).unwrap().rows[0].v_target.is_some());
    assert!(trace.vehicle(2).unwrap().rows[0].a_target.is_some());
    assert!(trace.vehicle(3).unwrap().rows[0].v_target.is_some());
}

#[test]
fn collision_stops_the_run_and_is_flagged() {
    let mut v = linear(0.5, 0.1, 3.0, 1.0);
    v.initial_gap = Some(3.0);
    let mut s = step_scenario(vec![v], 60.0);
    s.lead = LeadProfile::Step {
        v0: 20.0,
        t0: 1.0,
        dv: -20.0,
    };
    let trace = run_platoon(&s).unwrap();
    let c = trace.collision.expect("collision");
    assert_eq!(c.vehicle, 1);
    assert!(c.gap <= 0.0);
    assert_eq!(trace.ticks(), c.tick + 1);
    assert!(trace.ticks() < s.timing.total_ticks());
}

#[test]
fn csv_roundtrip_keeps_every_logged_value() {
    let mut vehicles = vec![linear(1.0, 0.3, 3.0, 3.0)];
    vehicles.push(mpc());
    let mut s = step_scenario(vehicles, 15.0);
    s.noise.enabled = true;
    let trace = run_platoon(&s).unwrap();
    let text = trace.to_csv_string();
    let header = text.lines().next().unwrap();
    assert_eq!(header, trace::CSV_COLUMNS.join(","));
    let back = PlatoonTrace::read_csv(text.as_bytes(), 0.05, 0.2).unwrap();
    assert_eq!(back.vehicles.len(), trace.vehicles.len());
    let same = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= 1e-9 * a.abs().max(1.0),
        (None, None) => true,
        _ => false,
    };
    for (va, vb) in trace.vehicles.iter().zip(&back.vehicles) {
        assert_eq!(va.rows.len(), vb.rows.len());
        for (a, b) in va.rows.iter().zip(&vb.rows) {
            assert_eq!(a.tick, b.tick);
            for (x, y) in [
                (Some(a.state.x), Some(b.state.x)),
                (Some(a.state.v), Some(b.state.v)),
                (Some(a.state.a), Some(b.state.a)),
                (a.v_target, b.v_target),
                (a.a_target, b.a_target),
                (a.v_pid, b.v_pid),
                (a.a_pid, b.a_pid),
                (a.p_term, b.p_term),
                (a.i_term, b.i_term),
                (a.f_term, b.f_term),
                (a.control, b.control),
                (a.gb, b.gb),
            ] {
                assert!(same(x, y), "vehicle {} tick {}: {x:?} vs {y:?}", va.id, a.tick);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn equilibrium_holds_at_any_speed(v in 2.0f64..30.0, n in 1usize..4, use_mpc in any::<bool>()) {
        let vehicles = vec![if use_mpc { mpc() } else { linear(1.0, 0.3, 3.0, 2.0) }; n];
        let s = Scenario {
            name: None,
            timing: TimingConfig { duration: 20.0, ..Default::default() },
            lead: LeadProfile::Constant { v0: v },
            vehicles,
            noise: NoiseConfig::default(),
        };
        let trace = run_platoon(&s).unwrap();
        for id in 1..=n {
            for r in &trace.vehicle(id).unwrap().rows {
                prop_assert!((r.state.v - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn same_seed_same_trace(seed in any::<u64>(), kp in 0.3f64..2.0) {
        let mut s = step_scenario(vec![linear(kp, 0.3, 3.0, 3.0); 2], 15.0);
        s.noise.enabled = true;
        s.noise.seed = seed;
        let a = run_platoon(&s).unwrap().to_csv_string();
        let b = run_platoon(&s).unwrap().to_csv_string();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn speeds_stay_non_negative(dv in -20.0f64..0.0, resp in 1.0f64..5.0) {
        let mut s = step_scenario(vec![linear(1.0, 0.3, 3.0, resp); 3], 30.0);
        s.lead = LeadProfile::Step { v0: 20.0, t0: 5.0, dv };
        let trace = run_platoon(&s).unwrap();
        for v in &trace.vehicles {
            prop_assert!(v.rows.iter().all(|r| r.state.v >= 0.0));
        }
    }
}
