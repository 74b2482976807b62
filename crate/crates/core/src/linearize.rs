//! Network Laplacian at the equilibrium and the reference-frame swing model.
//!
//! States are ordered `[Δδ_{1,n} … Δδ_{n-1,n}, Δω_1 … Δω_n]`, where machine `n`
//! is the reference and `Δδ_{i,n} = Δδ_i - Δδ_n`. The model is
//!
//! ```text
//!   d/dt Δδ_{i,n} = Δω_i - Δω_n
//!   d/dt Δω_i     = -(1/M_i) Σ_{j<n} H_ij Δδ_{j,n} - (D_i/M_i) Δω_i
//! ```
//!
//! Every row of `H` sums to zero, so `H Δδ = Σ_{j<n} H_{·j} Δδ_{j,n}` holds
//! exactly and the relative-angle block uses the first `n-1` columns of `H` as they
//! are. See `docs/linearization.md` for the derivation.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::NetworkCase;
use crate::reduce::ReducedNetwork;
use crate::report::{fmt12, sig12};

#[derive(Debug, Clone, PartialEq)]
pub struct Laplacian {
    pub bus_ids: Vec<u32>,
    /// `∂P/∂δ` over the boundary buses, pu power per rad.
    pub h: DMatrix<f64>,
}

/// Laplacian of the reduced network at its equilibrium:
/// `H_ij = -V_iV_j[B_ij cos δ_ij - G_ij sin δ_ij]` for `i ≠ j`,
/// `H_ii = Σ_{j≠i} V_iV_j[B_ij cos δ_ij - G_ij sin δ_ij]`.
pub fn build_laplacian(red: &ReducedNetwork) -> Result<Laplacian> {
    let sol = red
        .equilibrium
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("reduced network carries no equilibrium".into()))?;
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, max_mismatch: sol.max_mismatch });
    }
    let n = red.boundary_buses.len();
    let mut vm = Vec::with_capacity(n);
    let mut va = Vec::with_capacity(n);
    for &bus in &red.boundary_buses {
        let k = sol.index_of(bus).ok_or(Error::UnknownBus(bus))?;
        vm.push(sol.vm[k]);
        va.push(sol.va[k]);
    }
    Ok(Laplacian { bus_ids: red.boundary_buses.clone(), h: laplacian_from(&red.y_red, &vm, &va) })
}

pub fn laplacian_from(y: &DMatrix<num_complex::Complex64>, vm: &[f64], va: &[f64]) -> DMatrix<f64> {
    let n = vm.len();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut diag = 0.0;
        for j in (0..n).filter(|&j| j != i) {
            let (g, b) = (y[(i, j)].re, y[(i, j)].im);
            let (s, c) = (va[i] - va[j]).sin_cos();
            let coupling = vm[i] * vm[j] * (b * c - g * s);
            h[(i, j)] = -coupling;
            diag += coupling;
        }
        h[(i, i)] = diag;
    }
    h
}

/// One swing-equation machine per boundary bus. Several dynamic generators on
/// the same bus are lumped by summing their `M` and `D`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicMachine {
    pub bus: u32,
    pub generator_ids: Vec<u32>,
    pub m: f64,
    pub d: f64,
}

impl DynamicMachine {
    /// Damping factor `d = D/M` (1/s).
    pub fn damping_factor(&self) -> f64 {
        self.d / self.m
    }
}

pub fn machines_from_case(case: &NetworkCase) -> Vec<DynamicMachine> {
    let mut machines: Vec<DynamicMachine> = Vec::new();
    for g in case.dynamic_generators() {
        match machines.iter_mut().find(|m| m.bus == g.bus) {
            Some(m) => {
                m.generator_ids.push(g.id);
                m.m += g.inertia_m;
                m.d += g.damping_d;
            }
            None => machines.push(DynamicMachine {
                bus: g.bus,
                generator_ids: vec![g.id],
                m: g.inertia_m,
                d: g.damping_d,
            }),
        }
    }
    machines.sort_by_key(|m| m.bus);
    machines
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub state_labels: Vec<String>,
    /// Machines in state order; the reference is last.
    pub machines: Vec<DynamicMachine>,
    pub reference_bus: u32,
    /// Laplacian permuted into state order.
    pub laplacian: DMatrix<f64>,
    pub base_freq: f64,
}

pub fn assemble_state_matrix(
    laplacian: &Laplacian,
    machines: &[DynamicMachine],
    reference_bus: u32,
    base_freq: f64,
) -> Result<StateSpaceModel> {
    if machines.is_empty() {
        return Err(Error::NoDynamicGenerator);
    }
    if machines.len() != laplacian.bus_ids.len() {
        return Err(Error::Dimension { expected: laplacian.bus_ids.len(), found: machines.len() });
    }
    if !machines.iter().any(|m| m.bus == reference_bus) {
        return Err(Error::UnknownBus(reference_bus));
    }
    // State order: Laplacian order without the reference, then the reference.
    let mut order: Vec<usize> = Vec::with_capacity(machines.len());
    for (k, &bus) in laplacian.bus_ids.iter().enumerate() {
        if bus != reference_bus {
            order.push(k);
        }
    }
    order.push(laplacian.bus_ids.iter().position(|&b| b == reference_bus).ok_or(Error::UnknownBus(reference_bus))?);

    let mut ordered = Vec::with_capacity(machines.len());
    for &k in &order {
        let bus = laplacian.bus_ids[k];
        let m = machines.iter().find(|m| m.bus == bus).ok_or(Error::UnknownBus(bus))?;
        ordered.push(m.clone());
    }
    let n = ordered.len();
    let h = DMatrix::from_fn(n, n, |i, j| laplacian.h[(order[i], order[j])]);
    StateSpaceModel::assemble(h, ordered, base_freq)
}

impl StateSpaceModel {
    /// Builds `A` from a Laplacian and machines that are already in state order.
    pub fn assemble(laplacian: DMatrix<f64>, machines: Vec<DynamicMachine>, base_freq: f64) -> Result<Self> {
        let n = machines.len();
        if n == 0 {
            return Err(Error::NoDynamicGenerator);
        }
        if let Some(m) = machines.iter().find(|m| !(m.m > 0.0)) {
            return Err(Error::ZeroInertia { bus: m.bus });
        }
        let dim = 2 * n - 1;
        let mut a = DMatrix::zeros(dim, dim);
        for i in 0..n - 1 {
            a[(i, n - 1 + i)] = 1.0;
            a[(i, dim - 1)] = -1.0;
        }
        for (i, mach) in machines.iter().enumerate() {
            let row = n - 1 + i;
            for j in 0..n - 1 {
                a[(row, j)] = -laplacian[(i, j)] / mach.m;
            }
            a[(row, row)] = -mach.d / mach.m;
        }
        let reference = &machines[n - 1];
        let mut state_labels = Vec::with_capacity(dim);
        for mach in &machines[..n - 1] {
            state_labels.push(format!("ddelta_{}_{}", mach.bus, reference.bus));
        }
        for mach in &machines {
            state_labels.push(format!("domega_{}", mach.bus));
        }
        Ok(StateSpaceModel {
            a,
            state_labels,
            reference_bus: reference.bus,
            machines,
            laplacian,
            base_freq,
        })
    }

    /// Number of machines `n`.
    pub fn n(&self) -> usize {
        self.machines.len()
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Same network with different machine parameters (same state order).
    pub fn with_machines(&self, machines: Vec<DynamicMachine>) -> Result<Self> {
        if machines.len() != self.n() {
            return Err(Error::Dimension { expected: self.n(), found: machines.len() });
        }
        StateSpaceModel::assemble(self.laplacian.clone(), machines, self.base_freq)
    }

    /// Sets `D_i = ratio·M_i` for every machine, making all damping factors equal.
    pub fn with_uniform_damping(&self, ratio: f64) -> Result<Self> {
        let machines = self
            .machines
            .iter()
            .map(|m| DynamicMachine { d: ratio * m.m, ..m.clone() })
            .collect();
        self.with_machines(machines)
    }

    /// Signed speed-row angle block `h_i` (rows of the non-reference machines).
    pub fn h_i(&self) -> DMatrix<f64> {
        let n = self.n();
        self.a.view((n - 1, 0), (n - 1, n - 1)).into_owned()
    }

    /// Signed damping block `d_i` (diagonal, non-reference machines).
    pub fn d_i(&self) -> DMatrix<f64> {
        let n = self.n();
        self.a.view((n - 1, n - 1), (n - 1, n - 1)).into_owned()
    }

    /// Reference machine's angle row `h_n` (1 × (n-1)).
    pub fn h_n(&self) -> DMatrix<f64> {
        let n = self.n();
        self.a.view((2 * n - 2, 0), (1, n - 1)).into_owned()
    }

    /// Reference machine's signed damping entry `d_n`.
    pub fn d_n(&self) -> f64 {
        let k = self.dim() - 1;
        self.a[(k, k)]
    }

    /// Relative-speed angle block `h = h_i - 1 ⊗ h_n`, the `(n-1)×(n-1)` matrix
    /// acting on relative angles in the relative-speed coordinates.
    pub fn relative_h(&self) -> DMatrix<f64> {
        let n = self.n();
        let hi = self.h_i();
        let hn = self.h_n();
        DMatrix::from_fn(n - 1, n - 1, |i, j| hi[(i, j)] - hn[(0, j)])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("state");
        for l in &self.state_labels {
            let _ = write!(out, ",{l}");
        }
        out.push('\n');
        for (i, l) in self.state_labels.iter().enumerate() {
            out.push_str(l);
            for j in 0..self.dim() {
                let _ = write!(out, ",{}", fmt12(self.a[(i, j)]));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let rows: Vec<Vec<f64>> =
            (0..self.dim()).map(|i| (0..self.dim()).map(|j| sig12(self.a[(i, j)])).collect()).collect();
        let machines: Vec<_> = self
            .machines
            .iter()
            .map(|m| {
                serde_json::json!({
                    "bus": m.bus,
                    "generator_ids": m.generator_ids,
                    "m": sig12(m.m),
                    "d": sig12(m.d),
                    "damping_factor": sig12(m.damping_factor()),
                })
            })
            .collect();
        serde_json::json!({
            "reference_bus": self.reference_bus,
            "state_labels": self.state_labels,
            "machines": machines,
            "a": rows,
        })
    }
}
