//! Time-domain response of the linear model to small disturbances.
//!
//! The input is piecewise constant, so each step is propagated exactly with
//! `exp([[Aτ, Iτ], [0, 0]]) = [[Φ(τ), Ψ(τ)], [0, I]]`, where `Ψ(τ) = ∫₀^τ e^{As} ds`.
//! A disturbance that starts inside a step uses the partial interval, so the
//! result does not depend on the step size beyond rounding.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linearize::StateSpaceModel;
use crate::modal::eigenvalues;
use crate::report::{fmt12, sig12};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Step change of mechanical power (pu) from `start_time` on.
    PowerStep,
    /// Instantaneous change of rotor speed (rad/s) at `start_time`.
    SpeedImpulse,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub kind: PerturbationKind,
    pub target_gen: u32,
    pub magnitude: f64,
    pub start_time: f64,
}

impl Perturbation {
    pub fn power_step(target_gen: u32, magnitude: f64) -> Self {
        Perturbation { kind: PerturbationKind::PowerStep, target_gen, magnitude, start_time: 0.0 }
    }

    pub fn speed_impulse(target_gen: u32, magnitude: f64) -> Self {
        Perturbation { kind: PerturbationKind::SpeedImpulse, target_gen, magnitude, start_time: 0.0 }
    }
}

/// Default disturbance: a `-0.05` pu power step on the largest-rated dynamic
/// generator that is not on the reference bus (the reference machine itself
/// when it is alone).
pub fn default_perturbation(case: &crate::NetworkCase, model: &StateSpaceModel) -> Result<Perturbation> {
    let pick = case
        .dynamic_generators()
        .filter(|g| g.bus != model.reference_bus || model.n() == 1)
        .fold(None::<&crate::GeneratorSpec>, |best, g| match best {
            Some(b) if b.rating_mva >= g.rating_mva => Some(b),
            _ => Some(g),
        })
        .ok_or(Error::NoDynamicGenerator)?;
    Ok(Perturbation::power_step(pick.id, -0.05))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub horizon: f64,
    /// Step size; chosen from the spectrum when `None`.
    pub dt: Option<f64>,
    /// Largest accepted `|magnitude|` for a small-signal disturbance.
    pub small_signal_bound: f64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions { horizon: 30.0, dt: None, small_signal_bound: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    /// `speeds[i][k]`: Δω of machine `i` at sample `k` (rad/s), machines in state order.
    pub speeds: Vec<Vec<f64>>,
    /// `relative_angles[i][k]`: Δδ of machine `i` relative to the reference (rad).
    pub relative_angles: Vec<Vec<f64>>,
    /// `frequency[i][k] = base_freq + Δω/(2π)` (Hz).
    pub frequency: Vec<Vec<f64>>,
    pub machine_buses: Vec<u32>,
    /// Inertia of each machine, used as the center-of-inertia weight.
    pub inertia: Vec<f64>,
    pub reference_bus: u32,
    pub base_freq: f64,
    /// Earliest disturbance time.
    pub event_time: f64,
}

/// Largest step that resolves every oscillatory mode with ten samples per radian.
pub fn resolution_limit(model: &StateSpaceModel) -> Result<f64> {
    let max_im = eigenvalues(&model.a)?.iter().fold(0.0_f64, |m, z| m.max(z.im.abs()));
    Ok(if max_im > 0.0 { 0.1 / max_im } else { f64::INFINITY })
}

/// `min(0.01, 0.1 / max|λ|)`, which also respects the resolution limit.
pub fn auto_dt(model: &StateSpaceModel) -> Result<f64> {
    let max_abs = eigenvalues(&model.a)?.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    Ok(if max_abs > 0.0 { (0.1 / max_abs).min(0.01) } else { 0.01 })
}

fn propagators(a: &DMatrix<f64>, tau: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let d = a.nrows();
    let mut aug = DMatrix::zeros(2 * d, 2 * d);
    aug.view_mut((0, 0), (d, d)).copy_from(&(a * tau));
    aug.view_mut((0, d), (d, d)).fill_with_identity();
    aug.view_mut((0, d), (d, d)).scale_mut(tau);
    let e = aug.exp();
    (e.view((0, 0), (d, d)).into_owned(), e.view((0, d), (d, d)).into_owned())
}

fn machine_index(model: &StateSpaceModel, gen: u32) -> Result<usize> {
    model
        .machines
        .iter()
        .position(|m| m.generator_ids.contains(&gen))
        .ok_or(Error::UnknownGenerator(gen))
}

pub fn simulate_response(
    model: &StateSpaceModel,
    pert: &Perturbation,
    horizon: f64,
    dt: f64,
) -> Result<SimulationTrace> {
    simulate_many(model, std::slice::from_ref(pert), horizon, dt, f64::INFINITY)
}

pub fn simulate_with_options(
    model: &StateSpaceModel,
    perts: &[Perturbation],
    opts: &SimulationOptions,
) -> Result<SimulationTrace> {
    let dt = match opts.dt {
        Some(dt) => dt,
        // Shrink the automatic step so the grid ends exactly on the horizon.
        None => {
            let dt = auto_dt(model)?;
            if opts.horizon > 0.0 && opts.horizon.is_finite() {
                opts.horizon / (opts.horizon / dt).ceil()
            } else {
                dt
            }
        }
    };
    simulate_many(model, perts, opts.horizon, dt, opts.small_signal_bound)
}

/// Response to several simultaneous disturbances.
pub fn simulate_many(
    model: &StateSpaceModel,
    perts: &[Perturbation],
    horizon: f64,
    dt: f64,
    small_signal_bound: f64,
) -> Result<SimulationTrace> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidConfig(format!("time step must be positive, got {dt}")));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidConfig(format!("horizon must be positive, got {horizon}")));
    }
    let limit = resolution_limit(model)?;
    if dt > limit {
        return Err(Error::Resolution { dt, limit });
    }
    let n = model.n();
    let dim = model.dim();
    let mut inputs = Vec::with_capacity(perts.len());
    for p in perts {
        if !(p.start_time >= 0.0 && p.start_time.is_finite()) {
            return Err(Error::InvalidConfig(format!("start time must be non-negative, got {}", p.start_time)));
        }
        if !(p.magnitude.abs() <= small_signal_bound) {
            return Err(Error::InvalidConfig(format!(
                "disturbance magnitude {} exceeds the small-signal bound {}",
                p.magnitude, small_signal_bound
            )));
        }
        let i = machine_index(model, p.target_gen)?;
        let mut b = DVector::zeros(dim);
        b[n - 1 + i] = match p.kind {
            PerturbationKind::PowerStep => p.magnitude / model.machines[i].m,
            PerturbationKind::SpeedImpulse => p.magnitude,
        };
        inputs.push((p, b));
    }

    let steps = ((horizon / dt) - 1e-9).ceil().max(1.0) as usize;
    let (phi, psi) = propagators(&model.a, dt);
    let full: Vec<DVector<f64>> = inputs.iter().map(|(_, b)| &psi * b).collect();

    let mut x = DVector::zeros(dim);
    for (p, b) in &inputs {
        if p.kind == PerturbationKind::SpeedImpulse && p.start_time == 0.0 {
            x += b;
        }
    }
    let mut states = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    states.push(x.clone());
    times.push(0.0);
    for k in 0..steps {
        let (t0, t1) = (k as f64 * dt, (k + 1) as f64 * dt);
        let mut next = &phi * &x;
        for ((p, b), gamma) in inputs.iter().zip(&full) {
            match p.kind {
                PerturbationKind::PowerStep => {
                    if p.start_time <= t0 {
                        next += gamma;
                    } else if p.start_time < t1 {
                        let (_, psi_part) = propagators(&model.a, t1 - p.start_time);
                        next += psi_part * b;
                    }
                }
                PerturbationKind::SpeedImpulse => {
                    if p.start_time > t0 && p.start_time <= t1 {
                        let (phi_part, _) = propagators(&model.a, t1 - p.start_time);
                        next += phi_part * b;
                    }
                }
            }
        }
        x = next;
        states.push(x.clone());
        times.push(t1);
    }

    let speeds: Vec<Vec<f64>> = (0..n).map(|i| states.iter().map(|s| s[n - 1 + i]).collect()).collect();
    let relative_angles: Vec<Vec<f64>> = (0..n - 1).map(|i| states.iter().map(|s| s[i]).collect()).collect();
    let frequency = speeds
        .iter()
        .map(|w| w.iter().map(|&w| model.base_freq + w / (2.0 * PI)).collect())
        .collect();
    Ok(SimulationTrace {
        times,
        speeds,
        relative_angles,
        frequency,
        machine_buses: model.machines.iter().map(|m| m.bus).collect(),
        inertia: model.machines.iter().map(|m| m.m).collect(),
        reference_bus: model.reference_bus,
        base_freq: model.base_freq,
        event_time: perts.iter().map(|p| p.start_time).fold(f64::INFINITY, f64::min).min(horizon),
    })
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Center-of-inertia frequency `base + Σ M_iΔω_i / (2π ΣM)`.
    pub fn coi_frequency(&self) -> Vec<f64> {
        let total: f64 = self.inertia.iter().sum();
        (0..self.len())
            .map(|k| {
                let w: f64 = self.inertia.iter().zip(&self.speeds).map(|(m, s)| m * s[k]).sum::<f64>() / total;
                self.base_freq + w / (2.0 * PI)
            })
            .collect()
    }

    /// Keeps every `stride`-th sample (and the last one).
    pub fn decimate(&self, stride: usize) -> SimulationTrace {
        let stride = stride.max(1);
        let mut idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        if idx.last() != Some(&(self.len() - 1)) {
            idx.push(self.len() - 1);
        }
        let pick = |v: &Vec<f64>| idx.iter().map(|&k| v[k]).collect::<Vec<f64>>();
        SimulationTrace {
            times: pick(&self.times),
            speeds: self.speeds.iter().map(pick).collect(),
            relative_angles: self.relative_angles.iter().map(pick).collect(),
            frequency: self.frequency.iter().map(pick).collect(),
            ..self.clone()
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for b in &self.machine_buses {
            let _ = write!(out, ",f_{b}");
        }
        out.push_str(",f_coi");
        for b in &self.machine_buses[..self.machine_buses.len() - 1] {
            let _ = write!(out, ",ddelta_{b}_{}", self.reference_bus);
        }
        out.push('\n');
        let coi = self.coi_frequency();
        for k in 0..self.len() {
            out.push_str(&fmt12(self.times[k]));
            for f in &self.frequency {
                let _ = write!(out, ",{}", fmt12(f[k]));
            }
            let _ = write!(out, ",{}", fmt12(coi[k]));
            for a in &self.relative_angles {
                let _ = write!(out, ",{}", fmt12(a[k]));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrequencyMetrics {
    /// Minimum center-of-inertia frequency (Hz).
    pub nadir_p: f64,
    /// Rise time of the center-of-inertia excursion, 10% to 90% (s).
    pub t_r: Option<f64>,
    /// Time from the event to the largest excursion (s).
    pub t_p: Option<f64>,
    /// Time from the event until the signal stays within 2% of the excursion
    /// around its final value (s).
    pub t_s: Option<f64>,
    pub per_gen_nadir: Vec<f64>,
    pub per_gen_bus: Vec<u32>,
    /// Largest center-of-inertia deviation from base, signed (Hz).
    pub peak_deviation: f64,
}

fn crossing(times: &[f64], y: &[f64], level: f64, from: usize) -> Option<f64> {
    for k in from.max(1)..y.len() {
        if y[k] >= level {
            let (y0, y1) = (y[k - 1], y[k]);
            if y0 >= level {
                return Some(times[k - 1]);
            }
            let s = (level - y0) / (y1 - y0);
            return Some(times[k - 1] + s * (times[k] - times[k - 1]));
        }
    }
    None
}

pub fn compute_metrics(trace: &SimulationTrace, base_freq: f64) -> Result<FrequencyMetrics> {
    if trace.is_empty() {
        return Err(Error::InvalidConfig("empty trace".into()));
    }
    let moved = trace.speeds.iter().flatten().any(|&w| w != 0.0);
    if !moved {
        return Err(Error::NoEvent);
    }
    let per_gen_nadir: Vec<f64> = trace.frequency.iter().map(|f| f.iter().copied().fold(f64::INFINITY, f64::min)).collect();
    let coi = trace.coi_frequency();
    let dev: Vec<f64> = coi.iter().map(|f| f - base_freq).collect();
    let nadir_p = coi.iter().copied().fold(f64::INFINITY, f64::min);
    let start = trace.times.iter().position(|&t| t >= trace.event_time).unwrap_or(0);
    let (peak_k, peak) = dev
        .iter()
        .enumerate()
        .skip(start)
        .fold((start, 0.0_f64), |(bk, bv), (k, &v)| if v.abs() > bv.abs() { (k, v) } else { (bk, bv) });
    let per_gen_peak = trace.speeds.iter().flatten().fold(0.0_f64, |m, w| m.max(w.abs())) / (2.0 * PI);
    if peak.abs() <= 1e-12 * per_gen_peak {
        // The center of inertia does not move; only relative motion happened.
        return Ok(FrequencyMetrics {
            nadir_p,
            t_r: None,
            t_p: None,
            t_s: None,
            per_gen_nadir,
            per_gen_bus: trace.machine_buses.clone(),
            peak_deviation: peak,
        });
    }
    let normalized: Vec<f64> = dev.iter().map(|d| d / peak).collect();
    let t10 = crossing(&trace.times, &normalized, 0.1, start);
    let t90 = crossing(&trace.times, &normalized, 0.9, start);
    let t_r = match (t10, t90) {
        (Some(a), Some(b)) => Some(b - a),
        _ => None,
    };
    let t_p = Some(trace.times[peak_k] - trace.event_time);
    let final_value = *dev.last().expect("nonempty");
    let band = 0.02 * peak.abs();
    let last_out = dev.iter().rposition(|d| (d - final_value).abs() > band);
    let t_s = Some(match last_out {
        Some(k) if k + 1 < trace.len() => trace.times[k + 1] - trace.event_time,
        Some(_) => trace.times[trace.len() - 1] - trace.event_time,
        None => 0.0,
    });
    Ok(FrequencyMetrics {
        nadir_p,
        t_r,
        t_p,
        t_s,
        per_gen_nadir,
        per_gen_bus: trace.machine_buses.clone(),
        peak_deviation: peak,
    })
}

impl FrequencyMetrics {
    pub fn to_json(&self) -> serde_json::Value {
        let opt = |x: Option<f64>| x.map(sig12);
        serde_json::json!({
            "nadir_p": sig12(self.nadir_p),
            "t_r": opt(self.t_r),
            "t_p": opt(self.t_p),
            "t_s": opt(self.t_s),
            "peak_deviation": sig12(self.peak_deviation),
            "per_gen_nadir": self.per_gen_bus.iter().zip(&self.per_gen_nadir)
                .map(|(b, f)| serde_json::json!({ "bus": b, "nadir": sig12(*f) }))
                .collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linearize::DynamicMachine;

    fn single(m: f64, d: f64) -> StateSpaceModel {
        let mach = DynamicMachine { bus: 1, generator_ids: vec![1], m, d };
        StateSpaceModel::assemble(DMatrix::zeros(1, 1), vec![mach], 60.0).unwrap()
    }

    #[test]
    fn first_order_closed_form() {
        let (m, d, dp) = (2.0, 1.0, -0.05);
        let trace = simulate_response(&single(m, d), &Perturbation::power_step(1, dp), 10.0, 0.01).unwrap();
        for (k, &t) in trace.times.iter().enumerate() {
            let exact = dp / d * (1.0 - (-d / m * t).exp());
            assert!((trace.speeds[0][k] - exact).abs() <= 1e-8 * exact.abs().max(1e-12), "t={t}");
        }
    }

    #[test]
    fn mid_step_start_is_exact() {
        let (m, d, dp, s) = (2.0, 1.0, 0.05, 0.123);
        let mut p = Perturbation::power_step(1, dp);
        p.start_time = s;
        let trace = simulate_response(&single(m, d), &p, 2.0, 0.05).unwrap();
        for (k, &t) in trace.times.iter().enumerate() {
            let exact = if t <= s { 0.0 } else { dp / d * (1.0 - (-d / m * (t - s)).exp()) };
            assert!((trace.speeds[0][k] - exact).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_magnitude_is_no_event() {
        let trace = simulate_response(&single(1.0, 1.0), &Perturbation::power_step(1, 0.0), 1.0, 0.01).unwrap();
        assert!(trace.speeds[0].iter().all(|&w| w == 0.0));
        assert!(matches!(compute_metrics(&trace, 60.0), Err(Error::NoEvent)));
    }

    #[test]
    fn first_order_metrics() {
        let (m, d, dp) = (1.0, 2.0, -0.05);
        let trace = simulate_response(&single(m, d), &Perturbation::power_step(1, dp), 20.0, 0.001).unwrap();
        let met = compute_metrics(&trace, 60.0).unwrap();
        let final_f = 60.0 + dp / d / (2.0 * PI);
        assert!((met.nadir_p - final_f).abs() < 1e-8);
        // 10%→90% of a first-order rise is τ ln 9.
        assert!((met.t_r.unwrap() - (m / d) * 9f64.ln()).abs() < 1e-5);
        // 2% band: τ ln 50.
        assert!((met.t_s.unwrap() - (m / d) * 50f64.ln()).abs() < 2e-3);
    }

    #[test]
    fn resolution_guard() {
        let h = 100.0;
        let lap = DMatrix::from_row_slice(2, 2, &[h, -h, -h, h]);
        let machines = (1..=2).map(|b| DynamicMachine { bus: b, generator_ids: vec![b], m: 0.01, d: 0.0 }).collect();
        let model = StateSpaceModel::assemble(lap, machines, 60.0).unwrap();
        let err = simulate_response(&model, &Perturbation::power_step(1, 0.01), 1.0, 0.01);
        assert!(matches!(err, Err(Error::Resolution { .. })));
    }
}
