#![allow(dead_code)]

use std::path::PathBuf;

use gridsync::model::{load_case, CaseFormat};
use gridsync::study::{run_study, Study, StudyOptions};
use gridsync::{NetworkCase, Tech};

pub const BENCHMARKS: [&str; 6] = ["case9", "case30", "case39", "case57", "case118", "case145"];

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn load(name: &str) -> NetworkCase {
    let dir = data_dir();
    let m = dir.join(format!("{name}.m"));
    let d = dir.join(format!("{name}.dyn.json"));
    load_case(&m, CaseFormat::MatpowerM, Some(&d)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn study(case: &NetworkCase) -> Study {
    run_study(case, StudyOptions::default()).expect("study runs")
}

/// Keeps the slack-bus machines and the first dynamic generators until `k`
/// distinct buses are dynamic; every other generator becomes grid-following.
pub fn with_dynamic_buses(case: &NetworkCase, k: usize) -> NetworkCase {
    let mut out = case.clone();
    let slack = case.slack_bus().map(|b| b.id);
    let mut keep: Vec<u32> = slack.into_iter().collect();
    for g in &case.generators {
        if keep.len() >= k {
            break;
        }
        if !keep.contains(&g.bus) {
            keep.push(g.bus);
        }
    }
    for g in &mut out.generators {
        if !keep.contains(&g.bus) {
            g.tech = Tech::Gfl;
            g.inertia_m = 0.0;
            g.damping_d = 0.0;
        }
    }
    out
}
