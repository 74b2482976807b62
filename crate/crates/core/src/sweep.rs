//! Seeded Monte Carlo screening over inertia, damping, loading and technology mix.
//!
//! Scenario `k` draws from a ChaCha8 stream keyed on `(seed, k)`, so any
//! scenario can be regenerated on its own and evaluation order never matters.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::modal::{eigen_analysis, Verdict};
use crate::model::{damping_d_from_machine, inertia_m_from_h, validate_case, GeneratorSpec, NetworkCase, Tech};
use crate::report::fmt12;
use crate::simulate::{compute_metrics, default_perturbation, simulate_with_options, SimulationOptions};
use crate::study::{run_study, StudyOptions};

/// Version of the records CSV layout.
pub const RECORDS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TechMix {
    AllSg,
    AllGfmVsm,
    /// Grid-forming droop: drawn `M` times 0.01, drawn `D` times 2.
    AllGfmDroop,
    /// Retypes this share of generators (rounded, at most all but one) to GFL.
    GflFraction(f64),
}

impl std::str::FromStr for TechMix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sg" | "all-sg" => Ok(TechMix::AllSg),
            "gfm-vsm" | "all-gfm-vsm" => Ok(TechMix::AllGfmVsm),
            "gfm-droop" | "all-gfm-droop" => Ok(TechMix::AllGfmDroop),
            other => {
                let share = other
                    .strip_prefix("gfl:")
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown technology mix '{s}'")))?;
                let share: f64 = share.parse().map_err(|_| Error::InvalidConfig(format!("bad GFL fraction '{share}'")))?;
                if !(0.0..1.0).contains(&share) {
                    return Err(Error::InvalidConfig(format!("GFL fraction must lie in [0, 1), got {share}")));
                }
                Ok(TechMix::GflFraction(share))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoadScaling {
    /// One factor for every load.
    Global,
    /// An independent factor for each load.
    PerLoad,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub n_scenarios: usize,
    pub seed: u64,
    /// Inertia constant `H` in seconds on the machine rating.
    pub inertia_range: (f64, f64),
    /// Damping on the machine rating (pu power per rad/s).
    pub damping_range: (f64, f64),
    pub load_scale_range: (f64, f64),
    /// Rating as a multiple of scheduled dispatch.
    pub rating_range: (f64, f64),
    /// Smallest rating, as a fraction of the system base, for units dispatched near zero.
    pub rating_floor: f64,
    pub tech_mix: TechMix,
    pub load_scaling: LoadScaling,
    pub horizon: f64,
    pub perturbation_magnitude: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            n_scenarios: 1000,
            seed: 42,
            inertia_range: (0.8, 8.0),
            damping_range: (0.005, 0.05),
            load_scale_range: (0.8, 1.2),
            rating_range: (1.0, 2.5),
            rating_floor: 0.1,
            tech_mix: TechMix::AllSg,
            load_scaling: LoadScaling::Global,
            horizon: 30.0,
            perturbation_magnitude: -0.05,
        }
    }
}

fn check_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
        return Err(Error::InvalidConfig(format!("{name} range {lo}:{hi} must satisfy 0 <= lo <= hi")));
    }
    Ok(())
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenarios == 0 {
            return Err(Error::InvalidConfig("need at least one scenario".into()));
        }
        check_range("inertia", self.inertia_range)?;
        check_range("damping", self.damping_range)?;
        check_range("load", self.load_scale_range)?;
        check_range("rating", self.rating_range)?;
        if self.rating_range.0 < 1.0 {
            return Err(Error::InvalidConfig("ratings below dispatch (factor < 1) are not allowed".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(Error::InvalidConfig(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: u64,
    pub case: NetworkCase,
    pub load_scale: f64,
    pub tech_assignment: String,
    /// Validation problems of the drawn case, if any.
    pub invalid: Option<String>,
}

fn draw(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Deterministic in `(cfg.seed, id)`.
pub fn sample_scenario(base: &NetworkCase, cfg: &SweepConfig, id: u64) -> Scenario {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(id);

    let (mut case, load_scale) = match cfg.load_scaling {
        LoadScaling::Global => {
            let s = draw(&mut rng, cfg.load_scale_range);
            (base.with_load_scale(s), s)
        }
        LoadScaling::PerLoad => {
            let mut case = base.clone();
            let before: f64 = case.loads.iter().map(|l| l.p).sum();
            for l in &mut case.loads {
                let s = draw(&mut rng, cfg.load_scale_range);
                l.p *= s;
                l.q *= s;
            }
            let after: f64 = case.loads.iter().map(|l| l.p).sum();
            let ratio = if before != 0.0 { after / before } else { 1.0 };
            let scaled = base.with_load_scale(ratio);
            case.generators = scaled.generators;
            (case, ratio)
        }
    };

    let (base_mva, base_freq) = (case.base_mva, case.base_freq);
    for g in &mut case.generators {
        let h = draw(&mut rng, cfg.inertia_range);
        let d = draw(&mut rng, cfg.damping_range);
        let factor = draw(&mut rng, cfg.rating_range);
        let rating = factor * (g.dispatch_p * base_mva).max(cfg.rating_floor * base_mva);
        g.rating_mva = rating;
        g.inertia_m = inertia_m_from_h(h, rating, base_mva, base_freq);
        g.damping_d = damping_d_from_machine(d, rating, base_mva);
        g.tech = Tech::Sg;
        match cfg.tech_mix {
            TechMix::AllSg | TechMix::GflFraction(_) => {}
            TechMix::AllGfmVsm => g.tech = Tech::GfmVsm,
            TechMix::AllGfmDroop => {
                g.tech = Tech::GfmDroop;
                g.inertia_m *= 0.01;
                g.damping_d *= 2.0;
            }
        }
    }
    if let TechMix::GflFraction(share) = cfg.tech_mix {
        let total = case.generators.len();
        let k = ((share * total as f64).round() as usize).min(total.saturating_sub(1));
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut rng);
        for &i in &order[..k] {
            let g = &mut case.generators[i];
            g.tech = Tech::Gfl;
            g.inertia_m = 0.0;
            g.damping_d = 0.0;
        }
    }

    let tech_assignment = case.generators.iter().map(|g| g.tech.as_str()).collect::<Vec<_>>().join("|");
    let report = validate_case(&case);
    let invalid = report.has_errors().then(|| report.to_string().trim().replace('\n', "; "));
    Scenario { id, case, load_scale, tech_assignment, invalid }
}

/// Capacity-weighted inertia constant and machine-base damping:
/// `H_agg = Σ H_i S_i / Σ S_i`, `D_agg = Σ D_i S_i / Σ S_i`. GFL units count
/// with `H = D = 0`.
pub fn aggregate(gens: &[GeneratorSpec], base_mva: f64, base_freq: f64) -> Result<(f64, f64)> {
    let total: f64 = gens.iter().map(|g| g.rating_mva).sum();
    if !(total > 0.0) {
        return Err(Error::ZeroCapacity);
    }
    let h: f64 = gens.iter().map(|g| g.inertia_h(base_mva, base_freq) * g.rating_mva).sum();
    let d: f64 = gens.iter().map(|g| g.damping_machine(base_mva) * g.rating_mva).sum();
    Ok((h / total, d / total))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRecord {
    pub scenario_id: u64,
    pub h_agg: f64,
    pub d_agg: f64,
    pub load_scale: f64,
    pub tech_assignment: String,
    pub powerflow_converged: bool,
    pub verdict: Option<Verdict>,
    pub max_re_lambda: Option<f64>,
    pub nadir_p: Option<f64>,
    pub t_r: Option<f64>,
    pub t_p: Option<f64>,
    pub t_s: Option<f64>,
    pub diagnostic: String,
}

pub fn evaluate_scenario(scenario: &Scenario, cfg: &SweepConfig) -> SweepRecord {
    let case = &scenario.case;
    let (h_agg, d_agg) = aggregate(&case.generators, case.base_mva, case.base_freq).unwrap_or((f64::NAN, f64::NAN));
    let mut rec = SweepRecord {
        scenario_id: scenario.id,
        h_agg,
        d_agg,
        load_scale: scenario.load_scale,
        tech_assignment: scenario.tech_assignment.clone(),
        powerflow_converged: false,
        verdict: None,
        max_re_lambda: None,
        nadir_p: None,
        t_r: None,
        t_p: None,
        t_s: None,
        diagnostic: String::new(),
    };
    if let Some(why) = &scenario.invalid {
        rec.diagnostic = format!("invalid: {why}");
        return rec;
    }
    let study = match run_study(case, StudyOptions::default()) {
        Ok(s) => s,
        Err(e) => {
            rec.diagnostic = e.to_string();
            return rec;
        }
    };
    rec.powerflow_converged = true;
    let modal = match eigen_analysis(&study.model) {
        Ok(m) => m,
        Err(e) => {
            rec.diagnostic = e.to_string();
            return rec;
        }
    };
    rec.verdict = Some(modal.verdict);
    rec.max_re_lambda = Some(modal.max_real);
    if modal.verdict == Verdict::Unstable {
        rec.diagnostic = "unstable; not simulated".into();
        return rec;
    }
    let outcome = default_perturbation(case, &study.model).and_then(|mut p| {
        p.magnitude = cfg.perturbation_magnitude;
        let opts = SimulationOptions { horizon: cfg.horizon, dt: None, small_signal_bound: f64::INFINITY };
        let trace = simulate_with_options(&study.model, &[p], &opts)?;
        compute_metrics(&trace, case.base_freq)
    });
    match outcome {
        Ok(m) => {
            rec.nadir_p = Some(m.nadir_p);
            rec.t_r = m.t_r;
            rec.t_p = m.t_p;
            rec.t_s = m.t_s;
        }
        Err(e) => rec.diagnostic = e.to_string(),
    }
    rec
}

/// Every scenario in id order. Per-scenario failures end up in the records.
pub fn run_sweep(base: &NetworkCase, cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    cfg.validate()?;
    let ids: Vec<u64> = (0..cfg.n_scenarios as u64).collect();
    let eval = |&id: &u64| evaluate_scenario(&sample_scenario(base, cfg, id), cfg);
    #[cfg(feature = "parallel")]
    let records = {
        use rayon::prelude::*;
        ids.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let records = ids.iter().map(eval).collect();
    Ok(records)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt12).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn records_csv(records: &[SweepRecord]) -> String {
    let mut out = String::from(
        "scenario_id,h_agg,d_agg,load_scale,tech_assignment,powerflow_converged,verdict,max_re_lambda,nadir_p,t_r,t_p,t_s,diagnostic\n",
    );
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario_id,
            fmt12(r.h_agg),
            fmt12(r.d_agg),
            fmt12(r.load_scale),
            r.tech_assignment,
            r.powerflow_converged,
            r.verdict.map(|v| v.as_str()).unwrap_or_default(),
            opt(r.max_re_lambda),
            opt(r.nadir_p),
            opt(r.t_r),
            opt(r.t_p),
            opt(r.t_s),
            csv_field(&r.diagnostic),
        );
    }
    out
}

/// Rows for a nadir heatmap over `(D_agg, H_agg)`; only records with a nadir.
pub fn emit_heatmap(records: &[SweepRecord]) -> String {
    let mut out = String::from("d_agg,h_agg,nadir_p,verdict,below_59_5hz,below_48_5hz\n");
    for r in records {
        let (Some(nadir), Some(verdict)) = (r.nadir_p, r.verdict) else { continue };
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            fmt12(r.d_agg),
            fmt12(r.h_agg),
            fmt12(nadir),
            verdict.as_str(),
            nadir < 59.5,
            nadir < 48.5
        );
    }
    out
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` for fewer than two points or a constant series.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

/// One-sample Kolmogorov–Smirnov statistic against `U[lo, hi]`.
pub fn ks_uniform_statistic(samples: &[f64], lo: f64, hi: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    s.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Asymptotic KS critical value at significance 0.01.
pub fn ks_critical_001(n: usize) -> f64 {
    1.6276 / (n as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub scenarios: usize,
    pub powerflow_converged: usize,
    pub stable: usize,
    pub marginal: usize,
    pub unstable: usize,
    pub with_nadir: usize,
    pub spearman_nadir_d_agg: Option<f64>,
    pub spearman_nadir_h_agg: Option<f64>,
}

pub fn summarize(records: &[SweepRecord]) -> SweepSummary {
    let count = |v: Verdict| records.iter().filter(|r| r.verdict == Some(v)).count();
    let with: Vec<&SweepRecord> = records.iter().filter(|r| r.nadir_p.is_some()).collect();
    let nadir: Vec<f64> = with.iter().filter_map(|r| r.nadir_p).collect();
    let d: Vec<f64> = with.iter().map(|r| r.d_agg).collect();
    let h: Vec<f64> = with.iter().map(|r| r.h_agg).collect();
    SweepSummary {
        scenarios: records.len(),
        powerflow_converged: records.iter().filter(|r| r.powerflow_converged).count(),
        stable: count(Verdict::Stable),
        marginal: count(Verdict::Marginal),
        unstable: count(Verdict::Unstable),
        with_nadir: with.len(),
        spearman_nadir_d_agg: spearman(&d, &nadir),
        spearman_nadir_h_agg: spearman(&h, &nadir),
    }
}
