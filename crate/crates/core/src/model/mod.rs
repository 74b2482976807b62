//! Network and generator data model.
//!
//! All electrical quantities are per-unit on the system base `base_mva`; angles
//! are radians. Generator dynamics follow the swing equation
//! `M δ̈ = P* - P_e - D δ̇` with `δ̇` in rad/s, so
//!
//! * `inertia_m` is in pu·s²/rad on the system base. An inertia constant `H`
//!   (seconds, on the machine rating `S`) converts as `M = 2·H·(S/S_base)/ω_base`
//!   with `ω_base = 2π·base_freq`.
//! * `damping_d` is in pu power per rad/s on the system base. A machine-base
//!   coefficient converts as `D = D_machine·(S/S_base)`.
//!
//! Grid-following (GFL) units are kept in the case, tagged, with `M = D = 0`;
//! the reduction step folds them into constant admittances.

mod json;
pub mod matpower;
mod validate;

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use json::{case_from_json, case_to_json, DynamicData, GeneratorRecord};
pub use validate::{validate_case, Issue, Severity, ValidationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub base_freq: f64,
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub generators: Vec<GeneratorSpec>,
    pub loads: Vec<LoadSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusSpec {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (slack/PV) or flat-start guess (PQ).
    #[serde(default = "one")]
    pub voltage_setpoint: f64,
    #[serde(default)]
    pub angle_setpoint: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shunt_g: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub shunt_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchSpec {
    pub from_bus: u32,
    pub to_bus: u32,
    /// `r + jx`, serialized as `[r, x]`.
    pub series_impedance: Complex64,
    /// Total line charging `b` (split half at each end).
    #[serde(default)]
    pub shunt_susceptance: f64,
    /// Off-nominal turns ratio on the from side; 1 for a plain line.
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub tap_ratio: f64,
    /// Phase shift in radians (from-side voltage leads).
    #[serde(default, skip_serializing_if = "is_zero")]
    pub phase_shift: f64,
}

impl BranchSpec {
    pub fn line(from_bus: u32, to_bus: u32, series_impedance: Complex64, shunt_susceptance: f64) -> Self {
        BranchSpec { from_bus, to_bus, series_impedance, shunt_susceptance, tap_ratio: 1.0, phase_shift: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Tech {
    #[serde(rename = "SG")]
    Sg,
    #[serde(rename = "GFM_VSM")]
    GfmVsm,
    #[serde(rename = "GFM_DROOP")]
    GfmDroop,
    #[serde(rename = "GFL")]
    Gfl,
}

impl Tech {
    pub fn is_dynamic(self) -> bool {
        self != Tech::Gfl
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Tech::Sg => "SG",
            Tech::GfmVsm => "GFM_VSM",
            Tech::GfmDroop => "GFM_DROOP",
            Tech::Gfl => "GFL",
        }
    }
}

impl fmt::Display for Tech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub id: u32,
    pub bus: u32,
    pub tech: Tech,
    pub inertia_m: f64,
    pub damping_d: f64,
    /// Capacity in MVA.
    pub rating_mva: f64,
    /// Active power setpoint `P*` in per-unit.
    pub dispatch_p: f64,
    /// Fixed reactive output used when a GFL unit is folded; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reactive_q: Option<f64>,
}

impl GeneratorSpec {
    /// Inertia constant `H` in seconds on the machine rating.
    pub fn inertia_h(&self, base_mva: f64, base_freq: f64) -> f64 {
        if self.rating_mva <= 0.0 {
            return 0.0;
        }
        self.inertia_m * 2.0 * PI * base_freq * base_mva / (2.0 * self.rating_mva)
    }

    /// Damping coefficient on the machine rating (pu power per rad/s).
    pub fn damping_machine(&self, base_mva: f64) -> f64 {
        if self.rating_mva <= 0.0 {
            return 0.0;
        }
        self.damping_d * base_mva / self.rating_mva
    }
}

/// `M` in pu·s²/rad on the system base from `H` in seconds on `rating_mva`.
pub fn inertia_m_from_h(h: f64, rating_mva: f64, base_mva: f64, base_freq: f64) -> f64 {
    2.0 * h * (rating_mva / base_mva) / (2.0 * PI * base_freq)
}

/// System-base `D` from a machine-base damping coefficient.
pub fn damping_d_from_machine(d_machine: f64, rating_mva: f64, base_mva: f64) -> f64 {
    d_machine * rating_mva / base_mva
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadSpec {
    pub bus: u32,
    pub p: f64,
    #[serde(default)]
    pub q: f64,
}

impl NetworkCase {
    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_bus(&self) -> Option<&BusSpec> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    pub fn generator(&self, id: u32) -> Option<&GeneratorSpec> {
        self.generators.iter().find(|g| g.id == id)
    }

    pub fn dynamic_generators(&self) -> impl Iterator<Item = &GeneratorSpec> {
        self.generators.iter().filter(|g| g.tech.is_dynamic())
    }

    /// Share of installed capacity that is grid-following.
    pub fn gfl_penetration(&self) -> f64 {
        let total: f64 = self.generators.iter().map(|g| g.rating_mva).sum();
        if total <= 0.0 {
            return 0.0;
        }
        let gfl: f64 = self
            .generators
            .iter()
            .filter(|g| g.tech == Tech::Gfl)
            .map(|g| g.rating_mva)
            .sum();
        gfl / total
    }

    /// Scales every load (P and Q) and every non-slack generator dispatch by `factor`,
    /// so the slack machine only picks up the change in losses.
    pub fn with_load_scale(&self, factor: f64) -> NetworkCase {
        let mut out = self.clone();
        let slack = self.slack_bus().map(|b| b.id);
        for load in &mut out.loads {
            load.p *= factor;
            load.q *= factor;
        }
        for g in &mut out.generators {
            if Some(g.bus) != slack {
                g.dispatch_p *= factor;
            }
        }
        out
    }

    pub fn with_preset(&self, preset: TechPreset) -> NetworkCase {
        let mut out = self.clone();
        for g in &mut out.generators {
            preset.apply(g);
        }
        out
    }
}

/// Whole-fleet technology substitutions used for the technology comparison
/// (all-SG, all-VSM, all-droop, GFL share, all-GFL).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TechPreset {
    /// Leave every generator as synchronous machines with its base parameters.
    Sg,
    /// Grid-forming VSM with the same `M` and `D` as the machine it replaces.
    GfmVsm,
    /// Multi-loop droop grid-forming: `2D`, `0.01M`.
    GfmDroop,
    /// Each plant keeps a `1 - share` synchronous fraction: `M` and `D` scale by `1 - share`.
    GflShare(f64),
    /// Every generator replaced by a grid-following unit.
    AllGfl,
}

impl TechPreset {
    pub fn apply(self, g: &mut GeneratorSpec) {
        if g.tech == Tech::Gfl && self != TechPreset::AllGfl {
            return;
        }
        match self {
            TechPreset::Sg => g.tech = Tech::Sg,
            TechPreset::GfmVsm => g.tech = Tech::GfmVsm,
            TechPreset::GfmDroop => {
                g.tech = Tech::GfmDroop;
                g.inertia_m *= 0.01;
                g.damping_d *= 2.0;
            }
            TechPreset::GflShare(share) => {
                g.inertia_m *= 1.0 - share;
                g.damping_d *= 1.0 - share;
            }
            TechPreset::AllGfl => {
                g.tech = Tech::Gfl;
                g.inertia_m = 0.0;
                g.damping_d = 0.0;
            }
        }
    }
}

impl std::str::FromStr for TechPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "sg" | "all-sg" => Ok(TechPreset::Sg),
            "gfm-vsm" | "vsm" => Ok(TechPreset::GfmVsm),
            "gfm-droop" | "droop" => Ok(TechPreset::GfmDroop),
            "gfl" | "all-gfl" => Ok(TechPreset::AllGfl),
            _ => {
                if let Some(rest) = lower.strip_prefix("gfl-share:") {
                    let share: f64 = rest
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad GFL share '{rest}'")))?;
                    if !(0.0..1.0).contains(&share) {
                        return Err(Error::InvalidConfig(format!(
                            "GFL share must lie in [0, 1), got {share}"
                        )));
                    }
                    Ok(TechPreset::GflShare(share))
                } else {
                    Err(Error::InvalidConfig(format!("unknown technology preset '{s}'")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Json,
    MatpowerM,
}

impl CaseFormat {
    pub fn from_path(path: &Path) -> Option<CaseFormat> {
        match path.extension()?.to_str()? {
            "json" => Some(CaseFormat::Json),
            "m" => Some(CaseFormat::MatpowerM),
            _ => None,
        }
    }
}

/// Reads and validates a case. MATPOWER files need the dynamic sidecar;
/// for JSON cases a sidecar, when given, overrides the inline dynamics.
pub fn load_case(path: &Path, format: CaseFormat, dyn_path: Option<&Path>) -> Result<NetworkCase> {
    load_case_with_warnings(path, format, dyn_path).map(|(case, _)| case)
}

pub fn load_case_with_warnings(
    path: &Path,
    format: CaseFormat,
    dyn_path: Option<&Path>,
) -> Result<(NetworkCase, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let dynamics = match dyn_path {
        Some(p) => Some(DynamicData::from_json(&std::fs::read_to_string(p)?, p)?),
        None => None,
    };
    let (case, warnings) = match format {
        CaseFormat::Json => {
            let mut case = case_from_json(&text, path)?;
            if let Some(dynamics) = &dynamics {
                dynamics.apply_to(&mut case, path)?;
            }
            (case, Vec::new())
        }
        CaseFormat::MatpowerM => {
            let dynamics = dynamics.ok_or_else(|| {
                Error::InvalidConfig("MATPOWER cases need a dynamic-data sidecar (--dyn)".into())
            })?;
            let data = matpower::parse_matpower(&text, path)?;
            let (case, warnings) = data.into_case(&dynamics, path)?;
            (case, warnings)
        }
    };
    let report = validate_case(&case);
    if report.has_errors() {
        return Err(Error::Validation(report));
    }
    Ok((case, warnings))
}

fn one() -> f64 {
    1.0
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}
