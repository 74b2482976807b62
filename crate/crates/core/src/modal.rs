//! Eigenvalues, mode classification and the stability verdict.
//!
//! Besides the direct eigendecomposition of `A`, this module evaluates the cubic
//! matrix polynomial `p(λ) = αλ³ + βλ² + γλ + ξ` whose determinant vanishes on
//! the spectrum, and the closed form for the case where every machine has the
//! same damping factor.

use std::cmp::Ordering;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linearize::{DynamicMachine, StateSpaceModel};
use crate::report::{complex_pair, fmt12, sig12};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Stable,
    Marginal,
    Unstable,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Stable => "stable",
            Verdict::Marginal => "marginal",
            Verdict::Unstable => "unstable",
        }
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeClass {
    Internal,
    Coupling,
}

impl ModeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeClass::Internal => "internal",
            ModeClass::Coupling => "coupling",
        }
    }
}

/// A conjugate pair `λ = -ζω_n ± jω_n√(1-ζ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InternalMode {
    /// Index of the member with positive imaginary part.
    pub eig_index: usize,
    pub conjugate_index: usize,
    pub zeta: f64,
    pub omega_n: f64,
}

/// A real eigenvalue `λ = -k_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingMode {
    pub eig_index: usize,
    pub k_d: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModalResult {
    /// Sorted by imaginary part (descending), then real part (descending).
    pub eigenvalues: Vec<Complex64>,
    /// Unit-norm right eigenvectors, one column per eigenvalue.
    pub eigenvectors: DMatrix<Complex64>,
    pub classes: Vec<ModeClass>,
    pub internal_modes: Vec<InternalMode>,
    pub coupling_modes: Vec<CouplingMode>,
    pub verdict: Verdict,
    pub dominant_mode: usize,
    pub max_real: f64,
    pub tol_marginal: f64,
}

/// Relative threshold below which an imaginary part is treated as zero.
const REAL_AXIS_TOL: f64 = 1e-10;

fn inf_norm(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Eigenvalues of a real square matrix via the real Schur form, with nearly-real
/// values snapped onto the real axis and conjugate pairs made exact.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension { expected: a.nrows(), found: a.ncols() });
    }
    if a.nrows() == 0 {
        return Ok(Vec::new());
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::Eigensolver("state matrix has non-finite entries".into()));
    }
    let schur = nalgebra::linalg::Schur::try_new(a.clone(), f64::EPSILON, 100_000)
        .ok_or_else(|| Error::Eigensolver("real Schur iteration did not converge".into()))?;
    let scale = inf_norm(a).max(1.0);
    let mut eig: Vec<Complex64> = schur
        .complex_eigenvalues()
        .iter()
        .map(|z| if z.im.abs() <= REAL_AXIS_TOL * scale { Complex64::new(z.re, 0.0) } else { *z })
        .collect();
    // Pair every upper-half eigenvalue with its nearest lower-half partner and
    // make the pair exactly conjugate.
    let mut used = vec![false; eig.len()];
    for i in 0..eig.len() {
        if used[i] || eig[i].im <= 0.0 {
            continue;
        }
        let partner = (0..eig.len())
            .filter(|&j| !used[j] && j != i && eig[j].im < 0.0)
            .min_by(|&x, &y| {
                (eig[x] - eig[i].conj()).norm().partial_cmp(&(eig[y] - eig[i].conj()).norm()).unwrap_or(Ordering::Equal)
            })
            .ok_or_else(|| Error::Eigensolver("complex eigenvalue without conjugate partner".into()))?;
        let re = 0.5 * (eig[i].re + eig[partner].re);
        let im = 0.5 * (eig[i].im - eig[partner].im);
        eig[i] = Complex64::new(re, im);
        eig[partner] = Complex64::new(re, -im);
        used[i] = true;
        used[partner] = true;
    }
    eig.sort_by(|x, y| {
        y.im.partial_cmp(&x.im).unwrap_or(Ordering::Equal).then(y.re.partial_cmp(&x.re).unwrap_or(Ordering::Equal))
    });
    Ok(eig)
}

/// Right eigenvector for `lambda` by shifted inverse iteration in complex arithmetic.
pub fn eigenvector(a: &DMatrix<f64>, lambda: Complex64) -> Result<DVector<Complex64>> {
    let n = a.nrows();
    let scale = inf_norm(a).max(1.0);
    let shift = lambda + Complex64::new(1e-10 * scale, 1e-10 * scale);
    let shifted = DMatrix::from_fn(n, n, |i, j| {
        let v = Complex64::new(a[(i, j)], 0.0);
        if i == j { v - shift } else { v }
    });
    let lu = shifted.lu();
    let mut v = DVector::from_fn(n, |i, _| Complex64::new(1.0 + 0.1 * i as f64, 0.05 * (i % 3) as f64));
    for _ in 0..4 {
        let next = lu.solve(&v).ok_or_else(|| Error::Eigensolver("inverse iteration hit an exact singularity".into()))?;
        let norm = next.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Eigensolver("inverse iteration diverged".into()));
        }
        v = next / Complex64::new(norm, 0.0);
    }
    // Fix the phase so the largest entry is real and positive.
    let (k, _) = v.iter().enumerate().fold((0, 0.0), |(bk, bm), (k, z)| if z.norm() > bm { (k, z.norm()) } else { (bk, bm) });
    let phase = v[k] / Complex64::new(v[k].norm(), 0.0);
    Ok(v.map(|z| z / phase))
}

pub fn eigen_analysis(model: &StateSpaceModel) -> Result<ModalResult> {
    let a = &model.a;
    let eig = eigenvalues(a)?;
    let dim = eig.len();
    let mut vectors = DMatrix::zeros(dim, dim);
    for (k, &lambda) in eig.iter().enumerate() {
        vectors.set_column(k, &eigenvector(a, lambda)?);
    }
    let tol_marginal = 1e-9 * inf_norm(a);
    let (dominant_mode, max_real) = eig
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bk, bm), (k, z)| if z.re > bm { (k, z.re) } else { (bk, bm) });
    let result = ModalResult {
        eigenvalues: eig,
        eigenvectors: vectors,
        classes: Vec::new(),
        internal_modes: Vec::new(),
        coupling_modes: Vec::new(),
        verdict: verdict(max_real, tol_marginal),
        dominant_mode,
        max_real,
        tol_marginal,
    };
    Ok(classify_modes(result))
}

pub fn verdict(max_real: f64, tol_marginal: f64) -> Verdict {
    if max_real < -tol_marginal {
        Verdict::Stable
    } else if max_real.abs() <= tol_marginal {
        Verdict::Marginal
    } else {
        Verdict::Unstable
    }
}

/// Conjugate pairs become internal modes, real eigenvalues coupling modes.
pub fn classify_modes(mut result: ModalResult) -> ModalResult {
    let eig = &result.eigenvalues;
    let mut classes = vec![ModeClass::Coupling; eig.len()];
    let mut internal = Vec::new();
    let mut coupling = Vec::new();
    for (k, z) in eig.iter().enumerate() {
        if z.im > 0.0 {
            let partner = eig
                .iter()
                .position(|w| w.re == z.re && w.im == -z.im)
                .unwrap_or(k);
            classes[k] = ModeClass::Internal;
            classes[partner] = ModeClass::Internal;
            let (zeta, omega_n) = damping_ratio(*z);
            internal.push(InternalMode { eig_index: k, conjugate_index: partner, zeta, omega_n });
        } else if z.im == 0.0 {
            coupling.push(CouplingMode { eig_index: k, k_d: -z.re });
        }
    }
    result.classes = classes;
    result.internal_modes = internal;
    result.coupling_modes = coupling;
    result
}

/// `(ζ, ω_n)` of a complex eigenvalue: `ω_n = |λ|`, `ζ = -Re λ / |λ|`.
pub fn damping_ratio(z: Complex64) -> (f64, f64) {
    let omega_n = z.norm();
    (-z.re / omega_n, omega_n)
}

impl ModalResult {
    /// Internal-mode eigenvalue with positive imaginary part, per mode.
    pub fn internal_eigenvalues(&self) -> Vec<Complex64> {
        self.internal_modes.iter().map(|m| self.eigenvalues[m.eig_index]).collect()
    }

    pub fn to_json(&self, model: &StateSpaceModel) -> serde_json::Value {
        let n = model.n();
        let eig: Vec<_> = self
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let col = self.eigenvectors.column(k);
                let part = |r: std::ops::Range<usize>| -> Vec<[f64; 2]> { r.map(|i| complex_pair(col[i])).collect() };
                let mut entry = serde_json::json!({
                    "index": k,
                    "value": complex_pair(*z),
                    "class": self.classes[k].as_str(),
                    "eigenvector": {
                        "relative_angles": part(0..n - 1),
                        "speeds": part(n - 1..2 * n - 2),
                        "reference_speed": part(2 * n - 2..2 * n - 1),
                    },
                });
                if self.classes[k] == ModeClass::Internal {
                    let (zeta, omega_n) = damping_ratio(*z);
                    entry["zeta"] = sig12(zeta).into();
                    entry["omega_n"] = sig12(omega_n).into();
                }
                entry
            })
            .collect();
        let internal: Vec<_> = self
            .internal_modes
            .iter()
            .map(|m| {
                serde_json::json!({
                    "eig_index": m.eig_index,
                    "conjugate_index": m.conjugate_index,
                    "zeta": sig12(m.zeta),
                    "omega_n": sig12(m.omega_n),
                })
            })
            .collect();
        let coupling: Vec<_> = self
            .coupling_modes
            .iter()
            .map(|m| serde_json::json!({ "eig_index": m.eig_index, "k_d": sig12(m.k_d) }))
            .collect();
        serde_json::json!({
            "verdict": self.verdict,
            "max_re_lambda": sig12(self.max_real),
            "tol_marginal": sig12(self.tol_marginal),
            "dominant_mode": self.dominant_mode,
            "reference_bus": model.reference_bus,
            "state_labels": model.state_labels,
            "eigenvalues": eig,
            "internal_modes": internal,
            "coupling_modes": coupling,
        })
    }
}

/// Coefficients of the cubic matrix polynomial, each `(n-1)×(n-1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicCoefficients {
    pub alpha: DMatrix<f64>,
    pub beta: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
    pub xi: DMatrix<f64>,
}

impl CharacteristicCoefficients {
    /// Sum of the infinity norms of the four coefficients.
    pub fn scale(&self) -> f64 {
        inf_norm(&self.alpha) + inf_norm(&self.beta) + inf_norm(&self.gamma) + inf_norm(&self.xi)
    }

    pub fn order(&self) -> usize {
        self.alpha.nrows()
    }
}

/// `α = I`, `β = -d_i - d_n I`, `γ = d_i d_n - h_i + 1⊗h_n`, `ξ = h_i d_n - d_i (1⊗h_n)`,
/// with the signed blocks of `A`.
pub fn characteristic_coefficients(model: &StateSpaceModel) -> CharacteristicCoefficients {
    let k = model.n() - 1;
    let h_i = model.h_i();
    let d_i = model.d_i();
    let d_n = model.d_n();
    let ones_h_n = DMatrix::from_fn(k, k, |_, j| model.h_n()[(0, j)]);
    let eye = DMatrix::<f64>::identity(k, k);
    CharacteristicCoefficients {
        alpha: eye.clone(),
        beta: -&d_i - &eye * d_n,
        gamma: &d_i * d_n - &h_i + &ones_h_n,
        xi: &h_i * d_n - &d_i * &ones_h_n,
    }
}

/// `det(αλ³ + βλ² + γλ + ξ)`.
pub fn det_characteristic(c: &CharacteristicCoefficients, lambda: Complex64) -> Complex64 {
    let k = c.order();
    let (l2, l3) = (lambda * lambda, lambda * lambda * lambda);
    let p = DMatrix::from_fn(k, k, |i, j| {
        l3 * c.alpha[(i, j)] + l2 * c.beta[(i, j)] + lambda * c.gamma[(i, j)] + Complex64::new(c.xi[(i, j)], 0.0)
    });
    p.determinant()
}

/// Closed-form spectrum for a uniform signed damping factor `d_s` (negative for
/// positive damping): `λ = d_s/2 ± √(d_s² + 4λ_h)/2` for every eigenvalue `λ_h`
/// of the relative block `h`.
pub fn homogeneous_eigen(h: &DMatrix<f64>, d_s: f64) -> Result<Vec<Complex64>> {
    let lambda_h = eigenvalues(h)?;
    let mut out = Vec::with_capacity(2 * lambda_h.len());
    for lh in lambda_h {
        let root = (Complex64::new(d_s * d_s, 0.0) + 4.0 * lh).sqrt();
        out.push(0.5 * d_s + 0.5 * root);
        out.push(0.5 * d_s - 0.5 * root);
    }
    Ok(out)
}

/// Relative spread `max|d_i - d_j| / max|d_i|` of the signed damping factors.
pub fn damping_spread(model: &StateSpaceModel) -> f64 {
    let d: Vec<f64> = model.machines.iter().map(|m| -m.damping_factor()).collect();
    let max = d.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let min = d.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mag = d.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if mag == 0.0 { 0.0 } else { (max - min) / mag }
}

/// Homogeneous shortcut applied to a model; errors unless every machine has the
/// same damping factor within `1e-9` relative.
pub fn homogeneous_model_eigen(model: &StateSpaceModel) -> Result<Vec<Complex64>> {
    let spread = damping_spread(model);
    if spread > 1e-9 {
        return Err(Error::HeterogeneousDamping { spread });
    }
    homogeneous_eigen(&model.relative_h(), model.d_n())
}

/// Scales `M` and `D` of selected machines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingScenario {
    pub name: String,
    pub inertia_factor: f64,
    pub damping_factor: f64,
    /// Buses whose machines are scaled; all machines when `None`.
    pub buses: Option<Vec<u32>>,
}

impl ScalingScenario {
    pub fn uniform(name: &str, inertia_factor: f64, damping_factor: f64) -> Self {
        ScalingScenario { name: name.into(), inertia_factor, damping_factor, buses: None }
    }

    pub fn apply(&self, machines: &[DynamicMachine]) -> Vec<DynamicMachine> {
        machines
            .iter()
            .map(|m| {
                let hit = self.buses.as_ref().map_or(true, |b| b.contains(&m.bus));
                if hit {
                    DynamicMachine { m: m.m * self.inertia_factor, d: m.d * self.damping_factor, ..m.clone() }
                } else {
                    m.clone()
                }
            })
            .collect()
    }
}

/// Base case plus whole-fleet changes by factors of ten and two, including the
/// droop-like `0.01M, 2D` substitution.
pub fn default_scenarios() -> Vec<ScalingScenario> {
    vec![
        ScalingScenario::uniform("base", 1.0, 1.0),
        ScalingScenario::uniform("damping_x2", 1.0, 2.0),
        ScalingScenario::uniform("damping_x0.5", 1.0, 0.5),
        ScalingScenario::uniform("inertia_x2", 2.0, 1.0),
        ScalingScenario::uniform("inertia_x0.5", 0.5, 1.0),
        ScalingScenario::uniform("inertia_damping_x0.1", 0.1, 0.1),
        ScalingScenario::uniform("gfm_droop", 0.01, 2.0),
    ]
}

#[derive(Debug, Clone)]
pub struct LociEntry {
    pub scenario: ScalingScenario,
    pub result: ModalResult,
}

pub fn sensitivity_sweep(model: &StateSpaceModel, scenarios: &[ScalingScenario]) -> Result<Vec<LociEntry>> {
    scenarios
        .iter()
        .map(|s| {
            let scaled = model.with_machines(s.apply(&model.machines))?;
            Ok(LociEntry { scenario: s.clone(), result: eigen_analysis(&scaled)? })
        })
        .collect()
}

pub fn loci_csv(entries: &[LociEntry]) -> String {
    let mut out = String::from("scenario,eig_index,real,imag,class,zeta,omega_n\n");
    for e in entries {
        for (k, z) in e.result.eigenvalues.iter().enumerate() {
            let class = e.result.classes[k];
            let (zeta, omega_n) = match class {
                ModeClass::Internal => {
                    let (zeta, omega_n) = damping_ratio(*z);
                    (fmt12(zeta), fmt12(omega_n))
                }
                ModeClass::Coupling => (String::new(), String::new()),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.scenario.name,
                k,
                fmt12(z.re),
                fmt12(z.im),
                class.as_str(),
                zeta,
                omega_n
            );
        }
    }
    out
}
