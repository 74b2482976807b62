//! Bus admittance matrix and full Newton-Raphson AC power flow in polar form.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{BusKind, NetworkCase};
use crate::report::{fmt12, sig12};

/// Dense `Y = G + jB` with the bus id of every row.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub bus_ids: Vec<u32>,
    pub y: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn order(&self) -> usize {
        self.bus_ids.len()
    }

    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }
}

pub fn build_admittance(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.buses.len();
    let bus_ids: Vec<u32> = case.buses.iter().map(|b| b.id).collect();
    let index = |id: u32| case.bus_index(id).ok_or(Error::UnknownBus(id));
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for br in &case.branches {
        let (f, t) = (index(br.from_bus)?, index(br.to_bus)?);
        let ys = Complex64::new(1.0, 0.0) / br.series_impedance;
        let half_charging = Complex64::new(0.0, br.shunt_susceptance / 2.0);
        // Ideal transformer with complex ratio `a = τ e^{jθ}` on the from side.
        let a = Complex64::from_polar(br.tap_ratio, br.phase_shift);
        y[(f, f)] += (ys + half_charging) / (br.tap_ratio * br.tap_ratio);
        y[(t, t)] += ys + half_charging;
        y[(f, t)] -= ys / a.conj();
        y[(t, f)] -= ys / a;
    }
    for (k, bus) in case.buses.iter().enumerate() {
        y[(k, k)] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    Ok(AdmittanceMatrix { bus_ids, y })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerFlowOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PowerFlowOptions {
    fn default() -> Self {
        PowerFlowOptions { tol: 1e-8, max_iter: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    pub bus_ids: Vec<u32>,
    /// Voltage magnitudes (pu).
    pub vm: Vec<f64>,
    /// Voltage angles (rad).
    pub va: Vec<f64>,
    /// Net complex injection `V·conj(YV)` at each bus (pu).
    pub injections: Vec<Complex64>,
    /// Active output of each generator, aligned with `case.generators`.
    pub generator_p: Vec<f64>,
    /// Reactive output of each generator, aligned with `case.generators`.
    pub generator_q: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn index_of(&self, bus: u32) -> Option<usize> {
        self.bus_ids.iter().position(|&b| b == bus)
    }

    pub fn voltage(&self, k: usize) -> Complex64 {
        Complex64::from_polar(self.vm[k], self.va[k])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bus,vm,va,p,q\n");
        for k in 0..self.bus_ids.len() {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                self.bus_ids[k],
                fmt12(self.vm[k]),
                fmt12(self.va[k]),
                fmt12(self.injections[k].re),
                fmt12(self.injections[k].im)
            );
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let buses: Vec<_> = (0..self.bus_ids.len())
            .map(|k| {
                serde_json::json!({
                    "bus": self.bus_ids[k],
                    "vm": sig12(self.vm[k]),
                    "va": sig12(self.va[k]),
                    "p": sig12(self.injections[k].re),
                    "q": sig12(self.injections[k].im),
                })
            })
            .collect();
        serde_json::json!({
            "converged": self.converged,
            "iterations": self.iterations,
            "max_mismatch": sig12(self.max_mismatch),
            "buses": buses,
            "generator_p": self.generator_p.iter().map(|&p| sig12(p)).collect::<Vec<_>>(),
            "generator_q": self.generator_q.iter().map(|&q| sig12(q)).collect::<Vec<_>>(),
        })
    }
}

/// Active and reactive injections at polar voltages.
pub fn injections_polar(y: &AdmittanceMatrix, vm: &[f64], va: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = y.order();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for i in 0..n {
        for k in 0..n {
            let yik = y.y[(i, k)];
            if yik == Complex64::new(0.0, 0.0) {
                continue;
            }
            let (s, c) = (va[i] - va[k]).sin_cos();
            p[i] += vm[i] * vm[k] * (yik.re * c + yik.im * s);
            q[i] += vm[i] * vm[k] * (yik.re * s - yik.im * c);
        }
    }
    (p, q)
}

/// Jacobian of `[P(angle_buses); Q(magnitude_buses)]` with respect to
/// `[θ(angle_buses); |V|(magnitude_buses)]`.
pub fn jacobian(
    y: &AdmittanceMatrix,
    vm: &[f64],
    va: &[f64],
    angle_buses: &[usize],
    magnitude_buses: &[usize],
) -> DMatrix<f64> {
    let (p, q) = injections_polar(y, vm, va);
    let na = angle_buses.len();
    let nm = magnitude_buses.len();
    let mut jac = DMatrix::zeros(na + nm, na + nm);

    // dP/dθ, dP/d|V|, dQ/dθ, dQ/d|V| for a single (i, k) pair.
    let partials = |i: usize, k: usize| -> [f64; 4] {
        let yik = y.y[(i, k)];
        let (g, b) = (yik.re, yik.im);
        if i == k {
            let (gii, bii) = (g, b);
            [
                -q[i] - bii * vm[i] * vm[i],
                p[i] / vm[i] + gii * vm[i],
                p[i] - gii * vm[i] * vm[i],
                q[i] / vm[i] - bii * vm[i],
            ]
        } else {
            let (s, c) = (va[i] - va[k]).sin_cos();
            [
                vm[i] * vm[k] * (g * s - b * c),
                vm[i] * (g * c + b * s),
                -vm[i] * vm[k] * (g * c + b * s),
                vm[i] * (g * s - b * c),
            ]
        }
    };

    for (r, &i) in angle_buses.iter().enumerate() {
        for (c, &k) in angle_buses.iter().enumerate() {
            jac[(r, c)] = partials(i, k)[0];
        }
        for (c, &k) in magnitude_buses.iter().enumerate() {
            jac[(r, na + c)] = partials(i, k)[1];
        }
    }
    for (r, &i) in magnitude_buses.iter().enumerate() {
        for (c, &k) in angle_buses.iter().enumerate() {
            jac[(na + r, c)] = partials(i, k)[2];
        }
        for (c, &k) in magnitude_buses.iter().enumerate() {
            jac[(na + r, na + c)] = partials(i, k)[3];
        }
    }
    jac
}

/// Scheduled net (P, Q) injections per bus: generation minus load.
pub fn scheduled_injections(case: &NetworkCase) -> (Vec<f64>, Vec<f64>) {
    let n = case.buses.len();
    let mut p = vec![0.0; n];
    let mut q = vec![0.0; n];
    for g in &case.generators {
        if let Some(k) = case.bus_index(g.bus) {
            p[k] += g.dispatch_p;
            q[k] += g.reactive_q.unwrap_or(0.0);
        }
    }
    for load in &case.loads {
        if let Some(k) = case.bus_index(load.bus) {
            p[k] -= load.p;
            q[k] -= load.q;
        }
    }
    (p, q)
}

pub fn solve_power_flow(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    opts: PowerFlowOptions,
) -> Result<PowerFlowSolution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let n = case.buses.len();
    if y.order() != n {
        return Err(Error::Dimension { expected: n, found: y.order() });
    }
    let angle_buses: Vec<usize> = (0..n).filter(|&k| case.buses[k].kind != BusKind::Slack).collect();
    let magnitude_buses: Vec<usize> = (0..n).filter(|&k| case.buses[k].kind == BusKind::Pq).collect();
    let (p_sched, q_sched) = scheduled_injections(case);

    // Flat start: setpoint magnitudes on regulated buses, 1 pu elsewhere, slack angle elsewhere.
    let slack_angle = case.slack_bus().map(|b| b.angle_setpoint).unwrap_or(0.0);
    let mut vm: Vec<f64> = case
        .buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.voltage_setpoint })
        .collect();
    let mut va = vec![slack_angle; n];

    let mismatch = |vm: &[f64], va: &[f64]| -> Vec<f64> {
        let (p, q) = injections_polar(y, vm, va);
        angle_buses
            .iter()
            .map(|&k| p_sched[k] - p[k])
            .chain(magnitude_buses.iter().map(|&k| q_sched[k] - q[k]))
            .collect()
    };

    let mut iterations = 0;
    let mut f = mismatch(&vm, &va);
    let mut max_mismatch = inf_norm(&f);
    let mut converged = max_mismatch <= opts.tol;
    while !converged && iterations < opts.max_iter && max_mismatch.is_finite() {
        let jac = jacobian(y, &vm, &va, &angle_buses, &magnitude_buses);
        let lu = jac.lu();
        let rhs = nalgebra::DVector::from_vec(f);
        let dx = match lu.solve(&rhs) {
            Some(dx) if dx.iter().all(|v| v.is_finite()) && !near_singular(&lu) => dx,
            _ => return Err(Error::SingularJacobian { iteration: iterations }),
        };
        for (c, &k) in angle_buses.iter().enumerate() {
            va[k] += dx[c];
        }
        for (c, &k) in magnitude_buses.iter().enumerate() {
            vm[k] += dx[angle_buses.len() + c];
        }
        iterations += 1;
        f = mismatch(&vm, &va);
        max_mismatch = inf_norm(&f);
        converged = max_mismatch <= opts.tol;
    }

    let injections: Vec<Complex64> = {
        let (p, q) = injections_polar(y, &vm, &va);
        p.into_iter().zip(q).map(|(p, q)| Complex64::new(p, q)).collect()
    };
    let (generator_p, generator_q) = allocate_generation(case, &injections);
    Ok(PowerFlowSolution {
        bus_ids: y.bus_ids.clone(),
        vm,
        va,
        injections,
        generator_p,
        generator_q,
        converged,
        iterations,
        max_mismatch,
    })
}

/// Splits each bus's solved generation among its generators. Non-slack active
/// power stays at dispatch; the slack bus share and all reactive output of
/// regulated buses are split in proportion to rating.
fn allocate_generation(case: &NetworkCase, injections: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let n = case.buses.len();
    let mut load = vec![Complex64::new(0.0, 0.0); n];
    for l in &case.loads {
        if let Some(k) = case.bus_index(l.bus) {
            load[k] += Complex64::new(l.p, l.q);
        }
    }
    let mut rating_at = vec![0.0; n];
    let mut count_at = vec![0usize; n];
    for g in &case.generators {
        if let Some(k) = case.bus_index(g.bus) {
            rating_at[k] += g.rating_mva;
            count_at[k] += 1;
        }
    }
    let mut gp = Vec::with_capacity(case.generators.len());
    let mut gq = Vec::with_capacity(case.generators.len());
    for g in &case.generators {
        let Some(k) = case.bus_index(g.bus) else {
            gp.push(0.0);
            gq.push(0.0);
            continue;
        };
        let share = if rating_at[k] > 0.0 {
            g.rating_mva / rating_at[k]
        } else {
            1.0 / count_at[k] as f64
        };
        let total = injections[k] + load[k];
        let kind = case.buses[k].kind;
        gp.push(if kind == BusKind::Slack { total.re * share } else { g.dispatch_p });
        gq.push(if kind == BusKind::Pq { g.reactive_q.unwrap_or(0.0) } else { total.im * share });
    }
    (gp, gq)
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

fn near_singular(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>) -> bool {
    let u = lu.u();
    let diag = u.diagonal();
    let max = diag.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let min = diag.iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    max == 0.0 || min <= 1e-14 * max
}

/// Active injections by the explicit nodal sum
/// `P_i = V_i²G_ii + Σ_{j≠i} V_iV_j[B_ij sin(δ_i-δ_j) + G_ij cos(δ_i-δ_j)]`.
pub fn compute_injections(solution: &PowerFlowSolution, y: &AdmittanceMatrix) -> Result<Vec<f64>> {
    if solution.vm.len() != y.order() {
        return Err(Error::Dimension { expected: y.order(), found: solution.vm.len() });
    }
    Ok(active_injections(y, &solution.vm, &solution.va))
}

pub fn active_injections(y: &AdmittanceMatrix, vm: &[f64], va: &[f64]) -> Vec<f64> {
    let n = y.order();
    (0..n)
        .map(|i| {
            let mut p = vm[i] * vm[i] * y.y[(i, i)].re;
            for j in (0..n).filter(|&j| j != i) {
                let (g, b) = (y.y[(i, j)].re, y.y[(i, j)].im);
                let d = va[i] - va[j];
                p += vm[i] * vm[j] * (b * d.sin() + g * d.cos());
            }
            p
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BranchSpec, BusSpec, GeneratorSpec, LoadSpec, Tech};

    fn bus(id: u32, kind: BusKind) -> BusSpec {
        BusSpec { id, kind, voltage_setpoint: 1.0, angle_setpoint: 0.0, shunt_g: 0.0, shunt_b: 0.0 }
    }

    pub(crate) fn two_bus(load_p: f64, load_q: f64, r: f64) -> NetworkCase {
        NetworkCase {
            base_mva: 100.0,
            base_freq: 60.0,
            buses: vec![bus(1, BusKind::Slack), bus(2, BusKind::Pq)],
            branches: vec![BranchSpec::line(1, 2, Complex64::new(r, 0.1), 0.0)],
            generators: vec![GeneratorSpec {
                id: 1,
                bus: 1,
                tech: Tech::Sg,
                inertia_m: 0.05,
                damping_d: 0.02,
                rating_mva: 200.0,
                dispatch_p: load_p,
                reactive_q: None,
            }],
            loads: vec![LoadSpec { bus: 2, p: load_p, q: load_q }],
        }
    }

    #[test]
    fn single_branch_admittance() {
        let y = build_admittance(&two_bus(0.0, 0.0, 0.0)).unwrap();
        let j10 = Complex64::new(0.0, 10.0);
        assert!((y.y[(0, 0)] + j10).norm() < 1e-12);
        assert!((y.y[(1, 1)] + j10).norm() < 1e-12);
        assert!((y.y[(0, 1)] - j10).norm() < 1e-12);
        assert!((y.y[(1, 0)] - j10).norm() < 1e-12);
    }

    #[test]
    fn shunt_touches_only_its_diagonal() {
        let base = two_bus(0.0, 0.0, 0.0);
        let mut with_shunt = base.clone();
        with_shunt.buses[0].shunt_b = 0.05;
        let y0 = build_admittance(&base).unwrap();
        let y1 = build_admittance(&with_shunt).unwrap();
        let diff = &y1.y - &y0.y;
        for i in 0..2 {
            for j in 0..2 {
                let expected = if (i, j) == (0, 0) { Complex64::new(0.0, 0.05) } else { Complex64::new(0.0, 0.0) };
                assert!((diff[(i, j)] - expected).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn no_load_flat_start_is_exact() {
        let case = two_bus(0.0, 0.0, 0.0);
        let y = build_admittance(&case).unwrap();
        let sol = solve_power_flow(&case, &y, PowerFlowOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert!(sol.vm.iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(sol.va.iter().all(|&a| a.abs() < 1e-12));
    }

    #[test]
    fn flat_lossless_network_has_zero_active_injection() {
        let case = two_bus(0.0, 0.0, 0.0);
        let y = build_admittance(&case).unwrap();
        let p = active_injections(&y, &[1.0, 1.0], &[0.0, 0.0]);
        assert!(p.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn lossless_transfer_conserves_active_power() {
        let case = two_bus(0.8, 0.0, 0.0);
        let y = build_admittance(&case).unwrap();
        let sol = solve_power_flow(&case, &y, PowerFlowOptions::default()).unwrap();
        assert!(sol.converged);
        let p = compute_injections(&sol, &y).unwrap();
        assert!((p[0] - 0.8).abs() < 1e-8);
        assert!((p[1] + 0.8).abs() < 1e-8);
        assert!((sol.generator_p[0] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let case = two_bus(0.0, 0.0, 0.0);
        let y = build_admittance(&case).unwrap();
        let mut sol = solve_power_flow(&case, &y, PowerFlowOptions::default()).unwrap();
        sol.vm.pop();
        assert!(matches!(compute_injections(&sol, &y), Err(Error::Dimension { .. })));
    }

    #[test]
    fn heavy_load_does_not_converge() {
        let case = two_bus(20.0, 5.0, 0.01);
        let y = build_admittance(&case).unwrap();
        match solve_power_flow(&case, &y, PowerFlowOptions::default()) {
            Ok(sol) => assert!(!sol.converged),
            Err(Error::SingularJacobian { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }
}
