//! Constant-admittance folding of loads and grid-following units, and Kron
//! reduction onto the buses that host dynamic generators.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{NetworkCase, Tech};
use crate::powerflow::{AdmittanceMatrix, PowerFlowSolution};
use crate::report::complex_pair;

/// Pivots smaller than this in magnitude abort the elimination.
pub const ZERO_PIVOT: f64 = 1e-12;

/// Adds `conj(S)/|V|²` to the diagonal for every load (consumption `S`) and every
/// GFL unit (its solved injection, i.e. consumption `-S`) at the equilibrium voltage.
pub fn fold_constant_elements(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    sol: &PowerFlowSolution,
) -> Result<AdmittanceMatrix> {
    if !sol.converged {
        return Err(Error::NotConverged { iterations: sol.iterations, max_mismatch: sol.max_mismatch });
    }
    let mut folded = y.clone();
    let mut add = |bus: u32, consumption: Complex64| -> Result<()> {
        let k = y.index_of(bus).ok_or(Error::UnknownBus(bus))?;
        let s = sol.index_of(bus).ok_or(Error::UnknownBus(bus))?;
        let v2 = sol.vm[s] * sol.vm[s];
        if v2 == 0.0 {
            return Err(Error::ZeroVoltage { bus });
        }
        folded.y[(k, k)] += consumption.conj() / v2;
        Ok(())
    };
    for load in &case.loads {
        add(load.bus, Complex64::new(load.p, load.q))?;
    }
    for (g, spec) in case.generators.iter().enumerate() {
        if spec.tech == Tech::Gfl {
            let injection = Complex64::new(sol.generator_p[g], sol.generator_q[g]);
            add(spec.bus, -injection)?;
        }
    }
    Ok(folded)
}

/// One Kron elimination step, enough to undo it exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct EliminationStep {
    pub bus: u32,
    /// Row/column index of `bus` in the matrix before elimination.
    pub position: usize,
    pub pivot: Complex64,
    /// `Y_ip` for the buses that remain, in their post-step order.
    pub column: Vec<Complex64>,
    /// `Y_pk` for the buses that remain, in their post-step order.
    pub row: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReducedNetwork {
    pub boundary_buses: Vec<u32>,
    pub y_red: DMatrix<Complex64>,
    pub elimination_log: Vec<EliminationStep>,
    /// Equilibrium used for folding; needed to linearize.
    pub equilibrium: Option<PowerFlowSolution>,
}

impl ReducedNetwork {
    pub fn eliminated_buses(&self) -> Vec<u32> {
        self.elimination_log.iter().map(|s| s.bus).collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let n = self.boundary_buses.len();
        let rows: Vec<Vec<[f64; 2]>> =
            (0..n).map(|i| (0..n).map(|j| complex_pair(self.y_red[(i, j)])).collect()).collect();
        serde_json::json!({
            "boundary_buses": self.boundary_buses,
            "eliminated_buses": self.eliminated_buses(),
            "y_red": rows,
        })
    }
}

/// Eliminates one bus from `(ids, m)` in place and returns the step record.
pub fn eliminate(ids: &mut Vec<u32>, m: &mut DMatrix<Complex64>, bus: u32) -> Result<EliminationStep> {
    let p = ids.iter().position(|&b| b == bus).ok_or(Error::UnknownBus(bus))?;
    let pivot = m[(p, p)];
    if pivot.norm() < ZERO_PIVOT {
        return Err(Error::ZeroPivot { bus, magnitude: pivot.norm() });
    }
    let k = ids.len();
    let keep: Vec<usize> = (0..k).filter(|&i| i != p).collect();
    let column: Vec<Complex64> = keep.iter().map(|&i| m[(i, p)]).collect();
    let row: Vec<Complex64> = keep.iter().map(|&j| m[(p, j)]).collect();
    let mut out = DMatrix::zeros(k - 1, k - 1);
    for (a, &i) in keep.iter().enumerate() {
        let factor = column[a] / pivot;
        for (b, &j) in keep.iter().enumerate() {
            out[(a, b)] = m[(i, j)] - factor * row[b];
        }
    }
    *m = out;
    ids.remove(p);
    Ok(EliminationStep { bus, position: p, pivot, column, row })
}

/// Inverse of [`eliminate`]: rebuilds the pre-step matrix from the post-step
/// matrix and the step record.
pub fn reexpand(post: &DMatrix<Complex64>, step: &EliminationStep) -> DMatrix<Complex64> {
    let k = post.nrows() + 1;
    let p = step.position;
    let map = |a: usize| if a < p { a } else { a + 1 };
    let mut pre = DMatrix::zeros(k, k);
    for a in 0..k - 1 {
        for b in 0..k - 1 {
            pre[(map(a), map(b))] = post[(a, b)] + step.column[a] * step.row[b] / step.pivot;
        }
        pre[(map(a), p)] = step.column[a];
        pre[(p, map(a))] = step.row[a];
    }
    pre[(p, p)] = step.pivot;
    pre
}

/// Kron reduction onto `boundary`, eliminating interior buses one at a time in
/// ascending bus id.
pub fn kron_reduce(y_folded: &AdmittanceMatrix, boundary: &[u32]) -> Result<ReducedNetwork> {
    let mut interior: Vec<u32> =
        y_folded.bus_ids.iter().copied().filter(|b| !boundary.contains(b)).collect();
    interior.sort_unstable();
    kron_reduce_in_order(y_folded, boundary, &interior)
}

/// Kron reduction with an explicit elimination order over the interior buses.
pub fn kron_reduce_in_order(
    y_folded: &AdmittanceMatrix,
    boundary: &[u32],
    order: &[u32],
) -> Result<ReducedNetwork> {
    for &b in boundary {
        if y_folded.index_of(b).is_none() {
            return Err(Error::UnknownBus(b));
        }
    }
    let interior = y_folded.order() - boundary.len();
    if order.len() != interior || order.iter().any(|b| boundary.contains(b)) {
        return Err(Error::InvalidConfig(
            "elimination order must list every interior bus exactly once".into(),
        ));
    }
    let mut ids = y_folded.bus_ids.clone();
    let mut m = y_folded.y.clone();
    let mut log = Vec::with_capacity(order.len());
    for &bus in order {
        log.push(eliminate(&mut ids, &mut m, bus)?);
    }
    // Permute the survivors into the requested boundary order.
    let perm: Vec<usize> = boundary
        .iter()
        .map(|b| ids.iter().position(|x| x == b).expect("boundary bus survives elimination"))
        .collect();
    let n = boundary.len();
    let y_red = DMatrix::from_fn(n, n, |i, j| m[(perm[i], perm[j])]);
    Ok(ReducedNetwork {
        boundary_buses: boundary.to_vec(),
        y_red,
        elimination_log: log,
        equilibrium: None,
    })
}

/// Buses hosting at least one dynamic (non-GFL) generator, ascending.
pub fn dynamic_buses(case: &NetworkCase) -> Vec<u32> {
    let mut buses: Vec<u32> = case.dynamic_generators().map(|g| g.bus).collect();
    buses.sort_unstable();
    buses.dedup();
    buses
}

/// Folds, reduces onto the dynamic generator buses and attaches the equilibrium.
pub fn reduce_network(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    sol: &PowerFlowSolution,
) -> Result<ReducedNetwork> {
    let boundary = dynamic_buses(case);
    if boundary.is_empty() {
        return Err(Error::NoDynamicGenerator);
    }
    let folded = fold_constant_elements(case, y, sol)?;
    let mut red = kron_reduce(&folded, &boundary)?;
    red.equilibrium = Some(sol.clone());
    Ok(red)
}
