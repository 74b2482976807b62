//! JSON case schema and the dynamic-data sidecar.
//!
//! Canonical output always stores `inertia_m` / `damping_d` on the system base.
//! On input a generator may instead give `inertia_h` (seconds on `rating_mva`)
//! and `damping_machine` (pu power per rad/s on `rating_mva`).

use std::path::Path;

use serde::Deserialize;

use super::{damping_d_from_machine, inertia_m_from_h, BranchSpec, BusSpec, GeneratorSpec, LoadSpec, NetworkCase, Tech};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Deserialize)]
struct CaseFile {
    base_mva: f64,
    base_freq: f64,
    buses: Vec<BusSpec>,
    #[serde(default)]
    branches: Vec<BranchSpec>,
    #[serde(default)]
    generators: Vec<GeneratorRecord>,
    #[serde(default)]
    loads: Vec<LoadSpec>,
}

/// One generator entry as written in a case file or sidecar.
#[derive(Debug, Clone, Deserialize)]
pub struct GeneratorRecord {
    pub id: Option<u32>,
    pub bus: u32,
    pub tech: Tech,
    pub inertia_m: Option<f64>,
    pub inertia_h: Option<f64>,
    pub damping_d: Option<f64>,
    pub damping_machine: Option<f64>,
    pub rating_mva: f64,
    pub dispatch_p: Option<f64>,
    pub reactive_q: Option<f64>,
}

impl GeneratorRecord {
    pub fn to_spec(
        &self,
        default_id: u32,
        dispatch_fallback: Option<f64>,
        base_mva: f64,
        base_freq: f64,
    ) -> std::result::Result<GeneratorSpec, String> {
        let inertia_m = match (self.inertia_m, self.inertia_h) {
            (Some(_), Some(_)) => return Err("give either inertia_m or inertia_h, not both".into()),
            (Some(m), None) => m,
            (None, Some(h)) => inertia_m_from_h(h, self.rating_mva, base_mva, base_freq),
            (None, None) if self.tech == Tech::Gfl => 0.0,
            (None, None) => return Err("missing inertia (inertia_m or inertia_h)".into()),
        };
        let damping_d = match (self.damping_d, self.damping_machine) {
            (Some(_), Some(_)) => {
                return Err("give either damping_d or damping_machine, not both".into())
            }
            (Some(d), None) => d,
            (None, Some(d)) => damping_d_from_machine(d, self.rating_mva, base_mva),
            (None, None) if self.tech == Tech::Gfl => 0.0,
            (None, None) => return Err("missing damping (damping_d or damping_machine)".into()),
        };
        let dispatch_p = self
            .dispatch_p
            .or(dispatch_fallback)
            .ok_or_else(|| "missing dispatch_p".to_string())?;
        // GFL units carry no swing dynamics regardless of what the file says.
        let (inertia_m, damping_d) = if self.tech == Tech::Gfl {
            (0.0, 0.0)
        } else {
            (inertia_m, damping_d)
        };
        Ok(GeneratorSpec {
            id: self.id.unwrap_or(default_id),
            bus: self.bus,
            tech: self.tech,
            inertia_m,
            damping_d,
            rating_mva: self.rating_mva,
            dispatch_p,
            reactive_q: self.reactive_q,
        })
    }
}

/// Dynamic-data sidecar: one record per in-service generator, in case order.
#[derive(Debug, Clone, Deserialize)]
pub struct DynamicData {
    pub base_freq: Option<f64>,
    pub generators: Vec<GeneratorRecord>,
}

impl DynamicData {
    pub fn from_json(text: &str, path: &Path) -> Result<DynamicData> {
        serde_json::from_str(text).map_err(|e| json_error(e, path))
    }

    /// Overrides the dynamics of an already-built case, matching records by position.
    pub fn apply_to(&self, case: &mut NetworkCase, path: &Path) -> Result<()> {
        if let Some(f) = self.base_freq {
            case.base_freq = f;
        }
        if self.generators.len() != case.generators.len() {
            return Err(parse_error(
                path,
                format!(
                    "sidecar has {} generators, case has {}",
                    self.generators.len(),
                    case.generators.len()
                ),
            ));
        }
        for (k, (rec, g)) in self.generators.iter().zip(case.generators.iter_mut()).enumerate() {
            if rec.bus != g.bus {
                return Err(parse_error(
                    path,
                    format!("sidecar generator {} is on bus {}, case has bus {}", k + 1, rec.bus, g.bus),
                ));
            }
            *g = rec
                .to_spec(g.id, Some(g.dispatch_p), case.base_mva, case.base_freq)
                .map_err(|m| parse_error(path, format!("generator {}: {m}", k + 1)))?;
        }
        Ok(())
    }
}

pub fn case_from_json(text: &str, path: &Path) -> Result<NetworkCase> {
    let file: CaseFile = serde_json::from_str(text).map_err(|e| json_error(e, path))?;
    let generators = file
        .generators
        .iter()
        .enumerate()
        .map(|(k, rec)| {
            rec.to_spec(k as u32 + 1, None, file.base_mva, file.base_freq)
                .map_err(|m| parse_error(path, format!("generator {}: {m}", k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NetworkCase {
        base_mva: file.base_mva,
        base_freq: file.base_freq,
        buses: file.buses,
        branches: file.branches,
        generators,
        loads: file.loads,
    })
}

pub fn case_to_json(case: &NetworkCase) -> String {
    serde_json::to_string_pretty(case).expect("NetworkCase serializes")
}

fn json_error(e: serde_json::Error, path: &Path) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    }
}

fn parse_error(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    }
}
