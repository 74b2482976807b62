use gridsync_web::{analyze_json, loci_json, simulate_json};
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn analyze_reports_five_eigenvalues() {
    let v = parse(&analyze_json(1.0, 1.0).unwrap());
    assert_eq!(v["eigenvalues"].as_array().unwrap().len(), 5);
    assert_eq!(v["verdict"], "stable");
}

#[test]
fn analyze_rejects_zero_inertia_scale() {
    assert!(analyze_json(0.0, 1.0).is_err());
}

#[test]
fn damping_loci_move_left() {
    let v = parse(&loci_json("damping", 1.0, 4.0, 3).unwrap());
    let pts = v["points"].as_array().unwrap();
    let first = pts[0]["max_re"].as_f64().unwrap();
    let last = pts[2]["max_re"].as_f64().unwrap();
    assert!(last < first);
    assert!(loci_json("speed", 1.0, 2.0, 3).is_err());
}

#[test]
fn droop_settles_higher_than_sg() {
    let sg = parse(&simulate_json("sg", -0.05, 30.0, 400).unwrap());
    let droop = parse(&simulate_json("gfm-droop", -0.05, 30.0, 400).unwrap());
    assert!(sg["times"].as_array().unwrap().len() <= 402);
    assert!(droop["metrics"]["nadir_p"].as_f64().unwrap() > sg["metrics"]["nadir_p"].as_f64().unwrap());
    assert!(simulate_json("all-gfl", -0.05, 30.0, 400).unwrap_err().contains("no dynamic"));
}
