//! Independent cross-checks for the numerically delicate steps.
//!
//! Each oracle recomputes a quantity along a different route than the
//! production code: a block Schur complement instead of sequential elimination,
//! finite differences of a complex-form injection instead of the analytic
//! Laplacian, a companion linearization of the cubic matrix polynomial, and the
//! absolute-angle model instead of the reference-frame one.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;
use crate::linearize::{Laplacian, StateSpaceModel};
use crate::modal::{characteristic_coefficients, det_characteristic, ModalResult};
use crate::model::{BusKind, NetworkCase};
use crate::powerflow::{jacobian, AdmittanceMatrix, PowerFlowSolution};
use crate::reduce::{kron_reduce, ReducedNetwork};
use crate::report::sig12;
use crate::study::Study;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub oracle: String,
    pub applicable: bool,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub inputs_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl OracleReport {
    /// `pass` compares `max_rel_error` when `relative`, otherwise `max_abs_error`.
    fn measured(oracle: &str, abs: f64, rel: f64, tolerance: f64, relative: bool, digest: String) -> Self {
        let err = if relative { rel } else { abs };
        OracleReport {
            oracle: oracle.into(),
            applicable: true,
            max_abs_error: abs,
            max_rel_error: rel,
            tolerance,
            pass: err <= tolerance,
            inputs_digest: digest,
            note: None,
        }
    }

    fn inapplicable(oracle: &str, reason: String, digest: String) -> Self {
        OracleReport {
            oracle: oracle.into(),
            applicable: false,
            max_abs_error: 0.0,
            max_rel_error: 0.0,
            tolerance: 0.0,
            pass: true,
            inputs_digest: digest,
            note: Some(reason),
        }
    }

    fn with_note(mut self, note: String) -> Self {
        self.note = Some(note);
        self
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["max_abs_error"] = sig12(self.max_abs_error).into();
        v["max_rel_error"] = sig12(self.max_rel_error).into();
        v
    }
}

fn digest_f64<'a>(values: impl IntoIterator<Item = &'a f64>) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn digest_complex(m: &DMatrix<Complex64>) -> String {
    let flat: Vec<f64> = m.iter().flat_map(|z| [z.re, z.im]).collect();
    digest_f64(&flat)
}

fn row_sum_norm_c(m: &DMatrix<Complex64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// `Y_bb - Y_bi Y_ii⁻¹ Y_ib` by one dense block solve, compared with
/// [`kron_reduce`] in the row-sum norm. The tolerance is absolute.
pub fn schur_oracle(y_folded: &AdmittanceMatrix, boundary: &[u32], tolerance: f64) -> OracleReport {
    let digest = digest_complex(&y_folded.y);
    let b: Vec<usize> = y_folded.bus_ids.iter().enumerate().filter(|(_, id)| boundary.contains(id)).map(|(k, _)| k).collect();
    let i: Vec<usize> = (0..y_folded.order()).filter(|k| !b.contains(k)).collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| y_folded.y[(rows[r], cols[c])]);
    let y_bb = pick(&b, &b);
    let schur = if i.is_empty() {
        y_bb
    } else {
        let y_ii = pick(&i, &i);
        let lu = y_ii.lu();
        let solved = match lu.solve(&pick(&i, &b)) {
            Some(x) if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) => x,
            _ => return OracleReport::inapplicable("schur_complement", "interior block is singular".into(), digest),
        };
        y_bb - pick(&b, &i) * solved
    };
    let kron = match kron_reduce(y_folded, boundary) {
        Ok(r) => r,
        Err(e) => return OracleReport::inapplicable("schur_complement", format!("elimination failed: {e}"), digest),
    };
    let diff = &kron.y_red - &schur;
    let abs = row_sum_norm_c(&diff);
    let rel = abs / row_sum_norm_c(&schur).max(f64::MIN_POSITIVE);
    OracleReport::measured("schur_complement", abs, rel, tolerance, false, digest)
}

/// Active injections `Re(V_i · conj(Σ_j Y_ij V_j))` in rectangular form.
pub fn active_power_rectangular(y: &DMatrix<Complex64>, vm: &[f64], va: &[f64]) -> Vec<f64> {
    let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    (0..v.len())
        .map(|i| {
            let current: Complex64 = (0..v.len()).map(|j| y[(i, j)] * v[j]).sum();
            (v[i] * current.conj()).re
        })
        .collect()
}

/// Central-difference `∂P/∂δ` of the reduced network at its equilibrium.
pub fn fd_laplacian(red: &ReducedNetwork, step: f64) -> Option<DMatrix<f64>> {
    let sol = red.equilibrium.as_ref()?;
    let idx: Vec<usize> = red.boundary_buses.iter().map(|&b| sol.index_of(b)).collect::<Option<_>>()?;
    let vm: Vec<f64> = idx.iter().map(|&k| sol.vm[k]).collect();
    let va: Vec<f64> = idx.iter().map(|&k| sol.va[k]).collect();
    let n = vm.len();
    let mut h = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = va.clone();
        let mut minus = va.clone();
        plus[j] += step;
        minus[j] -= step;
        let pp = active_power_rectangular(&red.y_red, &vm, &plus);
        let pm = active_power_rectangular(&red.y_red, &vm, &minus);
        for i in 0..n {
            h[(i, j)] = (pp[i] - pm[i]) / (2.0 * step);
        }
    }
    Some(h)
}

/// Finite-difference check of the Laplacian; relative error in the max norm.
pub fn fd_jacobian_oracle(red: &ReducedNetwork, laplacian: &Laplacian, step: f64) -> OracleReport {
    let digest = digest_f64(laplacian.h.iter());
    let Some(fd) = fd_laplacian(red, step) else {
        return OracleReport::inapplicable("fd_laplacian", "reduced network has no equilibrium".into(), digest);
    };
    let abs = max_abs(&(&laplacian.h - &fd));
    let rel = abs / max_abs(&fd).max(f64::MIN_POSITIVE);
    OracleReport::measured("fd_laplacian", abs, rel, 1e-5, true, digest).with_note(format!("step {step:e} rad"))
}

/// Finite-difference check of the power-flow Jacobian at the solution.
pub fn fd_powerflow_jacobian_oracle(case: &NetworkCase, y: &AdmittanceMatrix, sol: &PowerFlowSolution, step: f64) -> OracleReport {
    let angle: Vec<usize> = (0..case.buses.len()).filter(|&k| case.buses[k].kind != BusKind::Slack).collect();
    let mag: Vec<usize> = (0..case.buses.len()).filter(|&k| case.buses[k].kind == BusKind::Pq).collect();
    let analytic = jacobian(y, &sol.vm, &sol.va, &angle, &mag);
    let digest = digest_f64(analytic.iter());
    let eval = |vm: &[f64], va: &[f64]| -> Vec<f64> {
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let s: Vec<Complex64> = (0..v.len())
            .map(|i| v[i] * (0..v.len()).map(|j| y.y[(i, j)] * v[j]).sum::<Complex64>().conj())
            .collect();
        angle.iter().map(|&k| s[k].re).chain(mag.iter().map(|&k| s[k].im)).collect()
    };
    let dim = angle.len() + mag.len();
    let mut fd = DMatrix::zeros(dim, dim);
    for c in 0..dim {
        let (mut vm_p, mut va_p) = (sol.vm.clone(), sol.va.clone());
        let (mut vm_m, mut va_m) = (sol.vm.clone(), sol.va.clone());
        if c < angle.len() {
            va_p[angle[c]] += step;
            va_m[angle[c]] -= step;
        } else {
            vm_p[mag[c - angle.len()]] += step;
            vm_m[mag[c - angle.len()]] -= step;
        }
        let (fp, fm) = (eval(&vm_p, &va_p), eval(&vm_m, &va_m));
        for r in 0..dim {
            fd[(r, c)] = (fp[r] - fm[r]) / (2.0 * step);
        }
    }
    let abs = max_abs(&(&analytic - &fd));
    let rel = abs / max_abs(&fd).max(f64::MIN_POSITIVE);
    OracleReport::measured("fd_powerflow_jacobian", abs, rel, 1e-5, true, digest)
}

/// Largest absolute mismatch between scheduled and computed injections at the
/// power-flow solution, evaluated in rectangular form.
pub fn injection_residual_oracle(case: &NetworkCase, y: &AdmittanceMatrix, sol: &PowerFlowSolution) -> OracleReport {
    let digest = digest_f64(sol.vm.iter().chain(&sol.va));
    let v: Vec<Complex64> = sol.vm.iter().zip(&sol.va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let mut p_sched = vec![0.0; v.len()];
    let mut q_sched = vec![0.0; v.len()];
    for (g, spec) in case.generators.iter().enumerate() {
        if let Some(k) = case.bus_index(spec.bus) {
            p_sched[k] += sol.generator_p[g];
            q_sched[k] += sol.generator_q[g];
        }
    }
    for l in &case.loads {
        if let Some(k) = case.bus_index(l.bus) {
            p_sched[k] -= l.p;
            q_sched[k] -= l.q;
        }
    }
    let mut abs = 0.0_f64;
    for (k, bus) in case.buses.iter().enumerate() {
        let s = v[k] * (0..v.len()).map(|j| y.y[(k, j)] * v[j]).sum::<Complex64>().conj();
        abs = abs.max((s.re - p_sched[k]).abs());
        if bus.kind == BusKind::Pq {
            abs = abs.max((s.im - q_sched[k]).abs());
        }
    }
    OracleReport::measured("injection_residual", abs, abs, 1e-8, false, digest)
}

/// Directed Hausdorff-style matching distance between two point sets of equal size:
/// greedy nearest pairing, worst pair.
pub fn matching_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0_f64;
    for &x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .fold((usize::MAX, f64::INFINITY), |best, c| if c.1 < best.1 { c } else { best });
        if k == usize::MAX {
            return f64::INFINITY;
        }
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

fn spectrum(m: &DMatrix<f64>) -> Option<Vec<Complex64>> {
    nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 100_000).map(|s| s.complex_eigenvalues().iter().copied().collect())
}

/// Roots of `det(αλ³ + βλ² + γλ + ξ)` from the block companion matrix, with the
/// `n-2` roots at `λ = d_n` that the cubic form always carries removed, compared
/// with the eigenvalues of `A`. Applicable for `2 ≤ n ≤ 4`.
pub fn polyroot_oracle(model: &StateSpaceModel, modal: &ModalResult) -> OracleReport {
    let digest = digest_f64(model.a.iter());
    let n = model.n();
    if !(2..=4).contains(&n) {
        return OracleReport::inapplicable("polyroot", format!("needs 2 <= n <= 4 machines, got {n}"), digest);
    }
    let c = characteristic_coefficients(model);
    let k = n - 1;
    let mut comp = DMatrix::zeros(3 * k, 3 * k);
    comp.view_mut((0, k), (k, k)).fill_with_identity();
    comp.view_mut((k, 2 * k), (k, k)).fill_with_identity();
    comp.view_mut((2 * k, 0), (k, k)).copy_from(&(-&c.xi));
    comp.view_mut((2 * k, k), (k, k)).copy_from(&(-&c.gamma));
    comp.view_mut((2 * k, 2 * k), (k, k)).copy_from(&(-&c.beta));
    let Some(mut roots) = spectrum(&comp) else {
        return OracleReport::inapplicable("polyroot", "companion eigensolver failed".into(), digest);
    };
    let d_n = Complex64::new(model.d_n(), 0.0);
    for _ in 0..n - 2 {
        let (pos, _) = roots
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |b, (i, r)| if (r - d_n).norm() < b.1 { (i, (r - d_n).norm()) } else { b });
        roots.remove(pos);
    }
    let abs = matching_distance(&roots, &modal.eigenvalues).max(matching_distance(&modal.eigenvalues, &roots));
    let scale = modal.eigenvalues.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    OracleReport::measured("polyroot", abs, abs / scale, 1e-6, false, digest)
        .with_note(format!("{} roots, {} removed at d_n", 3 * k, n - 2))
}

/// `|det p(λ)|` at every eigenvalue of `A`, normalized by the Hadamard bound
/// `Π_i ‖row_i p(λ)‖`. Limited to `n ≤ 12`, beyond which the determinant overflows.
pub fn det_residual_oracle(model: &StateSpaceModel, modal: &ModalResult) -> OracleReport {
    let digest = digest_f64(model.a.iter());
    if !(2..=12).contains(&model.n()) {
        return OracleReport::inapplicable("det_residual", format!("needs 2 <= n <= 12 machines, got {}", model.n()), digest);
    }
    let c = characteristic_coefficients(model);
    let mut worst_rel = 0.0_f64;
    let mut worst_abs = 0.0_f64;
    for &lambda in &modal.eigenvalues {
        let det = det_characteristic(&c, lambda).norm();
        let (l2, l3) = (lambda * lambda, lambda * lambda * lambda);
        let bound: f64 = (0..c.order())
            .map(|i| {
                (0..c.order())
                    .map(|j| (l3 * c.alpha[(i, j)] + l2 * c.beta[(i, j)] + lambda * c.gamma[(i, j)] + c.xi[(i, j)]).norm_sqr())
                    .sum::<f64>()
                    .sqrt()
            })
            .product();
        worst_abs = worst_abs.max(det);
        worst_rel = worst_rel.max(if bound > 0.0 { det / bound } else { 0.0 });
    }
    OracleReport::measured("det_residual", worst_abs, worst_rel, 1e-6, true, digest)
}

/// The `2n`-state absolute-angle model `[[0, I], [-M⁻¹H, -M⁻¹D]]` has the
/// spectrum of `A` plus one zero eigenvalue (uniform angle shift).
pub fn absolute_model_oracle(model: &StateSpaceModel, modal: &ModalResult) -> OracleReport {
    let digest = digest_f64(model.a.iter());
    let n = model.n();
    let mut full = DMatrix::zeros(2 * n, 2 * n);
    full.view_mut((0, n), (n, n)).fill_with_identity();
    for (i, m) in model.machines.iter().enumerate() {
        for j in 0..n {
            full[(n + i, j)] = -model.laplacian[(i, j)] / m.m;
        }
        full[(n + i, n + i)] = -m.d / m.m;
    }
    let Some(mut eig) = spectrum(&full) else {
        return OracleReport::inapplicable("absolute_model", "eigensolver failed".into(), digest);
    };
    let (pos, _) = eig.iter().enumerate().fold((0, f64::INFINITY), |b, (i, z)| if z.norm() < b.1 { (i, z.norm()) } else { b });
    eig.remove(pos);
    let abs = matching_distance(&eig, &modal.eigenvalues).max(matching_distance(&modal.eigenvalues, &eig));
    let scale = modal.eigenvalues.iter().fold(1.0_f64, |m, z| m.max(z.norm()));
    OracleReport::measured("absolute_model", abs, abs / scale, 1e-8, true, digest)
}

/// Single machine under a power step: `Δω(t) = (ΔP/D)(1 - e^{-(D/M)t})`.
pub fn single_machine_step(m: f64, d: f64, dp: f64, t: f64) -> f64 {
    if d == 0.0 {
        dp / m * t
    } else {
        dp / d * (1.0 - (-d / m * t).exp())
    }
}

/// Two identical undamped machines coupled by stiffness `h`: `λ = ±j√(2h/M)` and `0`.
pub fn two_machine_spectrum(h: f64, m: f64) -> [Complex64; 3] {
    let w = (2.0 * h / m).sqrt();
    [Complex64::new(0.0, w), Complex64::new(0.0, 0.0), Complex64::new(0.0, -w)]
}

/// Every applicable oracle for one study.
pub fn verify_study(study: &Study, modal: &ModalResult) -> Result<Vec<OracleReport>> {
    let folded = crate::reduce::fold_constant_elements(&study.case, &study.admittance, &study.solution)?;
    let boundary = &study.reduced.boundary_buses;
    let schur_tol = if folded.order() > 100 { 1e-9 } else { 1e-10 };
    Ok(vec![
        injection_residual_oracle(&study.case, &study.admittance, &study.solution),
        fd_powerflow_jacobian_oracle(&study.case, &study.admittance, &study.solution, 1e-6),
        schur_oracle(&folded, boundary, schur_tol),
        fd_jacobian_oracle(&study.reduced, &study.laplacian, 1e-6),
        absolute_model_oracle(&study.model, modal),
        polyroot_oracle(&study.model, modal),
        det_residual_oracle(&study.model, modal),
    ])
}

/// Residual `‖A v - λ v‖` of every eigenpair, relative to `‖A‖`.
pub fn eigenpair_residual(model: &StateSpaceModel, modal: &ModalResult) -> f64 {
    let a = model.a.map(|x| Complex64::new(x, 0.0));
    let norm = max_abs(&model.a).max(1.0);
    (0..modal.eigenvalues.len())
        .map(|k| {
            let v: DVector<Complex64> = modal.eigenvectors.column(k).into_owned();
            (&a * &v - &v * modal.eigenvalues[k]).norm() / norm
        })
        .fold(0.0, f64::max)
}
