use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn gridsync(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridsync")).args(args).output().expect("binary runs")
}

fn nine_bus(extra: &[&str]) -> Output {
    let (m, d) = (data("case9.m"), data("case9.dyn.json"));
    let mut args = vec!["--case", m.to_str().unwrap(), "--dyn", d.to_str().unwrap()];
    args.extend_from_slice(extra);
    gridsync(&args)
}

fn json_stdout(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sha256(path: &Path) -> String {
    Sha256::digest(fs::read(path).unwrap()).iter().map(|b| format!("{b:02x}")).collect()
}

#[test]
fn analyze_writes_outputs_and_a_verifiable_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = nine_bus(&["--out-dir", dir.path().to_str().unwrap(), "analyze", "--sensitivity"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let report = json_stdout(&out);
    assert_eq!(report["verdict"], "stable");
    assert_eq!(report["eigenvalues"].as_array().unwrap().len(), 5);
    for f in ["analysis.json", "loci.csv", "state_matrix.csv", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 42);
    for entry in manifest["outputs"].as_array().unwrap().iter().chain(manifest["inputs"].as_array().unwrap()) {
        let path = Path::new(entry["path"].as_str().unwrap());
        assert_eq!(entry["sha256"].as_str().unwrap(), sha256(path));
    }
}

#[test]
fn unstable_case_exits_with_two() {
    // A resistive line carrying power at a large angle gives a positive
    // off-diagonal Laplacian entry, enough to destabilize the light machine.
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("unstable.json");
    fs::write(
        &case,
        r#"{"base_mva": 100, "base_freq": 60,
 "buses": [{"id": 1, "kind": "slack"}, {"id": 2, "kind": "pv"}],
 "branches": [{"from_bus": 1, "to_bus": 2, "series_impedance": [0.3, 0.1]}],
 "generators": [
  {"id": 1, "bus": 1, "tech": "SG", "inertia_m": 0.01, "damping_d": 0.001, "rating_mva": 100, "dispatch_p": 0},
  {"id": 2, "bus": 2, "tech": "SG", "inertia_m": 10.0, "damping_d": 0.001, "rating_mva": 100, "dispatch_p": 0.5}],
 "loads": []}"#,
    )
    .unwrap();
    let out = gridsync(&["--case", case.to_str().unwrap(), "analyze"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert_eq!(json_stdout(&out)["verdict"], "unstable");
    let out = gridsync(&["--case", case.to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_disturbance_exits_with_three() {
    let out = nine_bus(&["simulate", "--magnitude", "0"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn all_grid_following_is_reported_as_infeasible() {
    let out = nine_bus(&["analyze", "--preset", "all-gfl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("synchronization is infeasible"), "{}", stderr(&out));
    assert!(out.stdout.is_empty());
}

#[test]
fn malformed_json_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let case = dir.path().join("bad.json");
    fs::write(&case, "{\n \"base_mva\": 100,\n \"buses\": [\n  {\"id\": 1,, }\n ]\n}\n").unwrap();
    let out = gridsync(&["--case", case.to_str().unwrap(), "analyze"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn inverted_range_is_rejected() {
    let out = nine_bus(&["sweep", "--n", "5", "--h-range", "5:1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--h-range"), "{}", stderr(&out));
}

#[test]
fn matpower_without_sidecar_is_rejected() {
    let m = data("case9.m");
    let out = gridsync(&["--case", m.to_str().unwrap(), "analyze"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("--dyn"));
}

#[test]
fn simulate_reports_metrics_and_trace() {
    let dir = tempfile::tempdir().unwrap();
    let out = nine_bus(&["--out-dir", dir.path().to_str().unwrap(), "simulate"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let m = json_stdout(&out);
    let nadir = m["nadir_p"].as_f64().unwrap();
    assert!((nadir - 59.92939).abs() < 5e-5, "{nadir}");
    let trace = fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("time,f_2,f_3,f_1,f_coi,ddelta_2_1,ddelta_3_1\n"), "{}", &trace[..80]);
}

#[test]
fn sweep_is_byte_reproducible() {
    let run = |dir: &Path| {
        let out = nine_bus(&["--out-dir", dir.to_str().unwrap(), "sweep", "--n", "60", "--tech-mix", "gfl:0.3"]);
        assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    for f in ["records.csv", "heatmap.csv", "summary.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn default_sweep_has_one_thousand_records() {
    let dir = tempfile::tempdir().unwrap();
    let records = dir.path().join("nested").join("records.csv");
    let out = nine_bus(&["sweep", "--out", records.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let text = fs::read_to_string(&records).unwrap();
    assert_eq!(text.lines().count(), 1001);
    assert!(records.with_file_name("manifest.json").exists());
    let summary = json_stdout(&out);
    assert_eq!(summary["summary"]["stable"], 1000);
}

#[test]
fn verify_passes_on_the_nine_bus_case() {
    let out = nine_bus(&["verify"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(json_stdout(&out)["all_pass"], true);
}

#[test]
fn shipped_sidecars_are_regenerated_exactly() {
    for n in [30, 39, 57, 118, 145] {
        let m = data(&format!("case{n}.m"));
        let seed = n.to_string();
        let out = gridsync(&["--case", m.to_str().unwrap(), "--seed", &seed, "synth-dyn"]);
        assert_eq!(out.status.code(), Some(0));
        assert_eq!(out.stdout, fs::read(data(&format!("case{n}.dyn.json"))).unwrap(), "case{n}");
    }
}

#[test]
fn converted_json_case_analyzes_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out = nine_bus(&["convert"]);
    assert_eq!(out.status.code(), Some(0));
    let case = dir.path().join("case9.json");
    fs::write(&case, &out.stdout).unwrap();
    let from_json = gridsync(&["--case", case.to_str().unwrap(), "analyze"]);
    let from_m = nine_bus(&["analyze"]);
    assert_eq!(from_json.stdout, from_m.stdout);
}

#[test]
fn csv_format_goes_to_stdout() {
    let out = nine_bus(&["--format", "csv", "powerflow"]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("bus,vm,va,p,q\n"));
    assert_eq!(text.lines().count(), 10);
}
