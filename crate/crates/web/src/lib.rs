//! Browser demo on the 9-bus benchmark: eigenvalue loci under inertia and
//! damping scaling, and the frequency response of each technology preset.
//!
//! The `*_json` functions are plain Rust so they can be tested natively; the
//! `#[wasm_bindgen]` wrappers only move strings across the boundary.

use std::path::Path;

use gridsync::linearize::StateSpaceModel;
use gridsync::modal::{eigen_analysis, ModeClass, ScalingScenario};
use gridsync::model::matpower::parse_matpower;
use gridsync::model::{validate_case, DynamicData, TechPreset};
use gridsync::simulate::{compute_metrics, default_perturbation, simulate_with_options, SimulationOptions};
use gridsync::study::{run_study, StudyOptions};
use gridsync::NetworkCase;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const CASE9: &str = include_str!("../../../data/case9.m");
const CASE9_DYN: &str = include_str!("../../../data/case9.dyn.json");

fn base_case() -> Result<NetworkCase, String> {
    let path = Path::new("case9.m");
    let dynamics = DynamicData::from_json(CASE9_DYN, Path::new("case9.dyn.json")).map_err(|e| e.to_string())?;
    let (case, _) = parse_matpower(CASE9, path)
        .and_then(|d| d.into_case(&dynamics, path))
        .map_err(|e| e.to_string())?;
    let report = validate_case(&case);
    if report.has_errors() {
        return Err(report.to_string());
    }
    Ok(case)
}

fn base_model() -> Result<StateSpaceModel, String> {
    let case = base_case()?;
    Ok(run_study(&case, StudyOptions::default()).map_err(|e| e.to_string())?.model)
}

fn modes(model: &StateSpaceModel) -> Result<Value, String> {
    let r = eigen_analysis(model).map_err(|e| e.to_string())?;
    let eig: Vec<Value> = r
        .eigenvalues
        .iter()
        .zip(&r.classes)
        .map(|(z, c)| json!({ "re": z.re, "im": z.im, "class": if *c == ModeClass::Internal { "internal" } else { "coupling" } }))
        .collect();
    Ok(json!({ "verdict": r.verdict, "max_re": r.max_real, "eigenvalues": eig }))
}

/// Spectrum with every machine's `M` and `D` multiplied by the given factors.
pub fn analyze_json(inertia_scale: f64, damping_scale: f64) -> Result<String, String> {
    if !(inertia_scale > 0.0 && damping_scale >= 0.0) {
        return Err("inertia scale must be positive and damping scale non-negative".into());
    }
    let model = base_model()?;
    let s = ScalingScenario::uniform("ui", inertia_scale, damping_scale);
    let scaled = model.with_machines(s.apply(&model.machines)).map_err(|e| e.to_string())?;
    Ok(modes(&scaled)?.to_string())
}

/// Eigenvalue paths while one factor sweeps logarithmically over `[lo, hi]`.
/// `parameter` is `"inertia"`, `"damping"` or `"both"`.
pub fn loci_json(parameter: &str, lo: f64, hi: f64, steps: usize) -> Result<String, String> {
    if !(lo > 0.0 && hi >= lo) || steps < 2 {
        return Err("need 0 < lo <= hi and at least two steps".into());
    }
    let model = base_model()?;
    let mut points = Vec::with_capacity(steps);
    for k in 0..steps {
        let f = lo * (hi / lo).powf(k as f64 / (steps - 1) as f64);
        let (mi, di) = match parameter {
            "inertia" => (f, 1.0),
            "damping" => (1.0, f),
            "both" => (f, f),
            other => return Err(format!("unknown parameter '{other}'")),
        };
        let s = ScalingScenario::uniform("ui", mi, di);
        let scaled = model.with_machines(s.apply(&model.machines)).map_err(|e| e.to_string())?;
        let mut m = modes(&scaled)?;
        m["factor"] = f.into();
        points.push(m);
    }
    Ok(json!({ "parameter": parameter, "points": points }).to_string())
}

/// Center-of-inertia and per-machine frequency after the default power step,
/// decimated to about `max_points` samples.
pub fn simulate_json(preset: &str, magnitude: f64, horizon: f64, max_points: usize) -> Result<String, String> {
    let preset: TechPreset = preset.parse().map_err(|e: gridsync::Error| e.to_string())?;
    let case = base_case()?.with_preset(preset);
    let study = run_study(&case, StudyOptions::default()).map_err(|e| e.to_string())?;
    let mut pert = default_perturbation(&case, &study.model).map_err(|e| e.to_string())?;
    pert.magnitude = magnitude;
    let opts = SimulationOptions { horizon, ..SimulationOptions::default() };
    let trace = simulate_with_options(&study.model, &[pert], &opts).map_err(|e| e.to_string())?;
    let metrics = compute_metrics(&trace, case.base_freq).map_err(|e| e.to_string())?;
    let trace = trace.decimate(trace.len().div_ceil(max_points.max(2)));
    Ok(json!({
        "times": trace.times,
        "coi": trace.coi_frequency(),
        "machines": trace.machine_buses,
        "frequency": trace.frequency,
        "metrics": metrics,
    })
    .to_string())
}

#[wasm_bindgen]
pub fn analyze(inertia_scale: f64, damping_scale: f64) -> Result<String, JsValue> {
    analyze_json(inertia_scale, damping_scale).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn loci(parameter: &str, lo: f64, hi: f64, steps: usize) -> Result<String, JsValue> {
    loci_json(parameter, lo, hi, steps).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(preset: &str, magnitude: f64, horizon: f64, max_points: usize) -> Result<String, JsValue> {
    simulate_json(preset, magnitude, horizon, max_points).map_err(|e| JsValue::from_str(&e))
}
