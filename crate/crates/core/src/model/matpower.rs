//! MATPOWER `.m` case reader.
//!
//! Only `baseMVA`, `bus`, `gen` and `branch` are read; every other `mpc.*`
//! field is skipped with a warning. MATPOWER carries no dynamic data, so the
//! generator dynamics always come from a [`DynamicData`] sidecar.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use num_complex::Complex64;

use super::{BranchSpec, BusKind, BusSpec, DynamicData, LoadSpec, NetworkCase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub line: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct MatpowerData {
    pub base_mva: f64,
    pub bus: Vec<Row>,
    pub gen: Vec<Row>,
    pub branch: Vec<Row>,
    pub warnings: Vec<String>,
}

// Column indices (0-based) of the MATPOWER case format, version 2.
const BUS_I: usize = 0;
const BUS_TYPE: usize = 1;
const PD: usize = 2;
const QD: usize = 3;
const GS: usize = 4;
const BS: usize = 5;
const VM: usize = 7;
const VA: usize = 8;

const GEN_BUS: usize = 0;
const PG: usize = 1;
const QG: usize = 2;
const VG: usize = 5;
const GEN_STATUS: usize = 7;

const F_BUS: usize = 0;
const T_BUS: usize = 1;
const BR_R: usize = 2;
const BR_X: usize = 3;
const BR_B: usize = 4;
const TAP: usize = 8;
const SHIFT: usize = 9;
const BR_STATUS: usize = 10;

enum Block {
    None,
    Table(&'static str),
    Skip { closer: char },
}

pub fn parse_matpower(text: &str, path: &Path) -> Result<MatpowerData> {
    let mut data = MatpowerData::default();
    let mut base_mva = None;
    let mut block = Block::None;
    let mut ignored = BTreeSet::new();

    for (k, raw) in text.lines().enumerate() {
        let line_no = k + 1;
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        match block {
            Block::Table(name) => {
                let (body, closed) = match line.find(']') {
                    Some(pos) => (&line[..pos], true),
                    None => (line, false),
                };
                push_rows(&mut data, name, body, line_no, path)?;
                if closed {
                    block = Block::None;
                }
            }
            Block::Skip { closer } => {
                if line.contains(closer) {
                    block = Block::None;
                }
            }
            Block::None => {
                let Some(rest) = line.strip_prefix("mpc.") else {
                    continue;
                };
                let Some((name, rhs)) = rest.split_once('=') else {
                    continue;
                };
                let name = name.trim();
                let rhs = rhs.trim();
                match name {
                    "baseMVA" => {
                        let v = rhs.trim_end_matches(';').trim();
                        base_mva = Some(v.parse::<f64>().map_err(|_| Error::Parse {
                            path: path.to_path_buf(),
                            line: line_no,
                            message: format!("bad baseMVA '{v}'"),
                        })?);
                    }
                    "version" => {}
                    "bus" | "gen" | "branch" => {
                        let table = match name {
                            "bus" => "bus",
                            "gen" => "gen",
                            _ => "branch",
                        };
                        let Some(open) = rhs.find('[') else {
                            return Err(Error::Parse {
                                path: path.to_path_buf(),
                                line: line_no,
                                message: format!("expected '[' after mpc.{name} ="),
                            });
                        };
                        let after = &rhs[open + 1..];
                        match after.find(']') {
                            Some(pos) => push_rows(&mut data, table, &after[..pos], line_no, path)?,
                            None => {
                                push_rows(&mut data, table, after, line_no, path)?;
                                block = Block::Table(table);
                            }
                        }
                    }
                    other => {
                        ignored.insert(other.to_string());
                        for (open, close) in [('[', ']'), ('{', '}')] {
                            if rhs.contains(open) && !rhs.contains(close) {
                                block = Block::Skip { closer: close };
                            }
                        }
                    }
                }
            }
        }
    }
    if let Block::Table(name) = block {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: text.lines().count(),
            message: format!("unterminated mpc.{name} table"),
        });
    }
    data.base_mva = base_mva.ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "missing mpc.baseMVA".into(),
    })?;
    for name in ignored {
        data.warnings.push(format!("ignored mpc.{name}"));
    }
    check_widths(&data, path)?;
    Ok(data)
}

fn strip_comment(line: &str) -> &str {
    match line.find('%') {
        Some(pos) => &line[..pos],
        None => line,
    }
}

fn push_rows(data: &mut MatpowerData, table: &str, body: &str, line: usize, path: &Path) -> Result<()> {
    for chunk in body.split(';') {
        let chunk = chunk.trim();
        if chunk.is_empty() {
            continue;
        }
        let values = chunk
            .split(|c: char| c.is_whitespace() || c == ',')
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    line,
                    message: format!("bad number '{t}' in mpc.{table}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let row = Row { line, values };
        match table {
            "bus" => data.bus.push(row),
            "gen" => data.gen.push(row),
            _ => data.branch.push(row),
        }
    }
    Ok(())
}

fn check_widths(data: &MatpowerData, path: &Path) -> Result<()> {
    for (name, rows, min) in [("bus", &data.bus, 13), ("gen", &data.gen, 10), ("branch", &data.branch, 11)] {
        if let Some(row) = rows.iter().find(|r| r.values.len() < min) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: row.line,
                message: format!("mpc.{name} row has {} columns, need at least {min}", row.values.len()),
            });
        }
    }
    Ok(())
}

impl MatpowerData {
    /// `(bus, Pg in MW)` of every in-service generator, in file order.
    pub fn online_generators(&self) -> Vec<(u32, f64)> {
        self.gen
            .iter()
            .filter(|r| r.values[GEN_STATUS] > 0.0)
            .map(|r| (r.values[GEN_BUS] as u32, r.values[PG]))
            .collect()
    }

    /// Deterministic placeholder dynamics for a case that ships without them:
    /// SG units with `H ~ U[2, 8]` s and machine-base damping `~ U[0.01, 0.05]`,
    /// rated at 1.5 times their dispatch (at least 10% of the system base).
    pub fn synthetic_dynamics(&self, seed: u64, base_freq: f64) -> serde_json::Value {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let generators: Vec<serde_json::Value> = self
            .online_generators()
            .into_iter()
            .map(|(bus, pg)| {
                let rating = (1.5 * pg.max(0.1 * self.base_mva)).round();
                let h: f64 = rng.gen_range(2.0..8.0);
                let d: f64 = rng.gen_range(0.01..0.05);
                serde_json::json!({
                    "bus": bus,
                    "tech": "SG",
                    "inertia_h": crate::report::sig12((h * 1e3).round() / 1e3),
                    "damping_machine": crate::report::sig12((d * 1e4).round() / 1e4),
                    "rating_mva": rating,
                })
            })
            .collect();
        serde_json::json!({ "base_freq": base_freq, "generators": generators })
    }

    /// Builds a per-unit [`NetworkCase`] and attaches the sidecar dynamics to the
    /// in-service generators, in file order.
    pub fn into_case(self, dynamics: &DynamicData, path: &Path) -> Result<(NetworkCase, Vec<String>)> {
        let mut warnings = self.warnings;
        let base = self.base_mva;
        let base_freq = dynamics.base_freq.unwrap_or(60.0);

        let online: Vec<&Row> = self
            .gen
            .iter()
            .filter(|r| {
                let on = r.values[GEN_STATUS] > 0.0;
                if !on {
                    warnings.push(format!("line {}: out-of-service generator skipped", r.line));
                }
                on
            })
            .collect();

        // Voltage setpoint of a regulated bus comes from its first in-service generator.
        let mut vg: BTreeMap<u32, f64> = BTreeMap::new();
        for r in &online {
            vg.entry(r.values[GEN_BUS] as u32).or_insert(r.values[VG]);
        }

        let mut isolated = BTreeSet::new();
        let mut buses = Vec::with_capacity(self.bus.len());
        let mut loads = Vec::new();
        for r in &self.bus {
            let v = &r.values;
            let id = v[BUS_I] as u32;
            let kind = match v[BUS_TYPE] as i64 {
                3 => BusKind::Slack,
                2 if vg.contains_key(&id) => BusKind::Pv,
                2 => {
                    warnings.push(format!("bus {id}: PV bus without in-service generator treated as PQ"));
                    BusKind::Pq
                }
                1 => BusKind::Pq,
                4 => {
                    warnings.push(format!("bus {id}: isolated bus dropped"));
                    isolated.insert(id);
                    continue;
                }
                t => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: r.line,
                        message: format!("unknown bus type {t}"),
                    })
                }
            };
            let voltage_setpoint = match kind {
                BusKind::Pq => 1.0,
                _ => vg.get(&id).copied().unwrap_or(v[VM]),
            };
            let angle_setpoint = if kind == BusKind::Slack { v[VA].to_radians() } else { 0.0 };
            buses.push(BusSpec {
                id,
                kind,
                voltage_setpoint,
                angle_setpoint,
                shunt_g: v[GS] / base,
                shunt_b: v[BS] / base,
            });
            if v[PD] != 0.0 || v[QD] != 0.0 {
                loads.push(LoadSpec { bus: id, p: v[PD] / base, q: v[QD] / base });
            }
        }

        let mut branches = Vec::with_capacity(self.branch.len());
        for r in &self.branch {
            let v = &r.values;
            if v[BR_STATUS] <= 0.0 {
                warnings.push(format!("line {}: out-of-service branch skipped", r.line));
                continue;
            }
            let (f, t) = (v[F_BUS] as u32, v[T_BUS] as u32);
            if isolated.contains(&f) || isolated.contains(&t) {
                continue;
            }
            branches.push(BranchSpec {
                from_bus: f,
                to_bus: t,
                series_impedance: Complex64::new(v[BR_R], v[BR_X]),
                shunt_susceptance: v[BR_B],
                // A zero tap means a plain line.
                tap_ratio: if v[TAP] == 0.0 { 1.0 } else { v[TAP] },
                phase_shift: v[SHIFT].to_radians(),
            });
        }

        if dynamics.generators.len() != online.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                message: format!(
                    "sidecar has {} generators, case has {} in service",
                    dynamics.generators.len(),
                    online.len()
                ),
            });
        }
        let mut generators = Vec::with_capacity(online.len());
        for (k, (row, rec)) in online.iter().zip(&dynamics.generators).enumerate() {
            let bus = row.values[GEN_BUS] as u32;
            if rec.bus != bus {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: row.line,
                    message: format!("sidecar generator {} is on bus {}, case has bus {bus}", k + 1, rec.bus),
                });
            }
            let mut spec = rec
                .to_spec(k as u32 + 1, Some(row.values[PG] / base), base, base_freq)
                .map_err(|m| Error::Parse {
                    path: path.to_path_buf(),
                    line: row.line,
                    message: format!("generator {}: {m}", k + 1),
                })?;
            if spec.reactive_q.is_none() && spec.tech == super::Tech::Gfl {
                let q = row.values[QG] / base;
                if q != 0.0 {
                    spec.reactive_q = Some(q);
                }
            }
            generators.push(spec);
        }

        Ok((
            NetworkCase {
                base_mva: base,
                base_freq,
                buses,
                branches,
                generators,
                loads,
            },
            warnings,
        ))
    }
}
