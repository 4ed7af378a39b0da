use std::path::PathBuf;

use accsim_core::io::{parse_scenario, scenario_to_json};
use accsim_core::*;

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn gallery(name: &str) -> Scenario {
    load_scenario(dir().join(format!("{name}.json"))).unwrap()
}

#[test]
fn every_gallery_file_loads_and_roundtrips() {
    let mut count = 0;
    for entry in std::fs::read_dir(dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "json") {
            let s = load_scenario(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            let again = parse_scenario(&scenario_to_json(&s), None).unwrap();
            assert_eq!(s, again, "{}", path.display());
            count += 1;
        }
    }
    assert!(count >= 15);
}

#[test]
fn undershoot_scenario_has_ratio_below_one() {
    let s = gallery("actuator_undershoot");
    assert!(s.vehicles.iter().all(|v| v.actuator.ratio_at(20.0) < 1.0));
    let s = gallery("actuator_overshoot");
    assert!(s.vehicles.iter().all(|v| v.actuator.ratio_at(20.0) > 1.0));
}

#[test]
fn negative_gain_is_rejected_with_its_path() {
    let text = r#"{
  "lead": {"kind": "constant", "v0": 10},
  "vehicles": [{"planner": {"kind": "linear"}, "controller": {"ki": -0.1}}]
}"#;
    match parse_scenario(text, None).unwrap_err() {
        ScenarioError::Invalid { path, .. } => assert_eq!(path, "vehicles[0].controller.ki"),
        other => panic!("{other}"),
    }
}

#[test]
fn resp_scale_sweep_is_non_increasing() {
    let base = gallery("actuator_undershoot");
    let values = [1.8, 2.4, 3.0, 3.6, 4.2];
    let summary = run_sweep(&base, "vehicles.*.actuator.resp_scale", &values, 0).unwrap();
    let ratios: Vec<f64> = summary.rows.iter().map(|r| r.last_ratio().unwrap()).collect();
    assert!(summary.rows.iter().all(|r| r.ok()));
    for w in ratios.windows(2) {
        assert!(w[1] <= w[0] + 0.02, "{ratios:?}");
    }
}

#[test]
fn doubling_kp_lowers_the_ratio() {
    let base = gallery("kp_base");
    let kp = base.vehicles[0].controller.kp.at(0.0);
    let summary = run_sweep(&base, "vehicles.*.controller.kp", &[kp, 2.0 * kp], 2).unwrap();
    let r: Vec<f64> = summary.rows.iter().map(|r| r.last_ratio().unwrap()).collect();
    assert!(r[1] < r[0], "{r:?}");
}

#[test]
fn sweep_summary_is_reproducible_across_thread_counts() {
    let base = gallery("noise_on");
    let values = [0.5, 1.0, 1.5];
    let a = run_sweep(&base, "vehicles.*.controller.kp", &values, 1).unwrap().to_csv_string();
    let b = run_sweep(&base, "vehicles.*.controller.kp", &values, 3).unwrap().to_csv_string();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 4);
}

#[test]
fn sweep_records_collisions_and_continues() {
    let mut base = gallery("kp_base");
    base.vehicles.truncate(1);
    base.lead = LeadProfile::Step {
        v0: 20.0,
        t0: 5.0,
        dv: -20.0,
    };
    // An instant stop from 20 m/s cannot be absorbed inside the headway gap.
    let summary = run_sweep(&base, "lead.dv", &[-20.0, -5.0], 2).unwrap();
    assert!(summary.rows[0].collision);
    assert!(!summary.rows[1].collision);
}
