use std::collections::HashSet;
use std::fmt;

use serde::Serialize;

use super::{BusKind, NetworkCase, Tech};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    /// A data-model invariant is violated; the case cannot be used.
    Error,
    /// The case is well-formed but a stability precondition fails.
    Precondition,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Issue {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has_errors(&self) -> bool {
        self.issues.iter().any(|i| i.severity == Severity::Error)
    }

    fn error(&mut self, location: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            severity: Severity::Error,
            location: location.into(),
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, issue) in self.issues.iter().enumerate() {
            if k > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{}: {}", issue.location, issue.message)?;
        }
        Ok(())
    }
}

const DISPATCH_SLACK: f64 = 1e-9;

/// Lists every violated invariant. Pure: the same case always yields the same report.
pub fn validate_case(case: &NetworkCase) -> ValidationReport {
    let mut report = ValidationReport::default();

    if !(case.base_mva > 0.0 && case.base_mva.is_finite()) {
        report.error("case", format!("base_mva must be positive, got {}", case.base_mva));
    }
    if !(case.base_freq > 0.0 && case.base_freq.is_finite()) {
        report.error("case", format!("base_freq must be positive, got {}", case.base_freq));
    }

    let mut ids = HashSet::new();
    for bus in &case.buses {
        if !ids.insert(bus.id) {
            report.error(format!("bus {}", bus.id), "duplicate bus id");
        }
        if !(bus.voltage_setpoint > 0.0 && bus.voltage_setpoint.is_finite()) {
            report.error(
                format!("bus {}", bus.id),
                format!("voltage_setpoint must be positive, got {}", bus.voltage_setpoint),
            );
        }
    }
    match case.buses.iter().filter(|b| b.kind == BusKind::Slack).count() {
        1 => {}
        0 => report.error("case", "missing slack bus"),
        k => report.error("case", format!("{k} slack buses; exactly one is required")),
    }

    for (k, br) in case.branches.iter().enumerate() {
        let loc = format!("branch {} ({}-{})", k + 1, br.from_bus, br.to_bus);
        for end in [br.from_bus, br.to_bus] {
            if !ids.contains(&end) {
                report.error(&loc, format!("refers to nonexistent bus {end}"));
            }
        }
        if br.from_bus == br.to_bus {
            report.error(&loc, "from_bus equals to_bus");
        }
        let z = br.series_impedance;
        if !(z.norm() > 0.0 && z.norm().is_finite()) {
            report.error(&loc, "series impedance magnitude must be positive");
        }
        if !(br.tap_ratio > 0.0 && br.tap_ratio.is_finite()) {
            report.error(&loc, format!("tap ratio must be positive, got {}", br.tap_ratio));
        }
    }

    let mut gen_ids = HashSet::new();
    for g in &case.generators {
        let loc = format!("generator {}", g.id);
        if !gen_ids.insert(g.id) {
            report.error(&loc, "duplicate generator id");
        }
        if !ids.contains(&g.bus) {
            report.error(&loc, format!("refers to nonexistent bus {}", g.bus));
        }
        if g.inertia_m < 0.0 || !g.inertia_m.is_finite() {
            report.error(&loc, format!("inertia must be non-negative, got {}", g.inertia_m));
        }
        if g.damping_d < 0.0 || !g.damping_d.is_finite() {
            report.error(&loc, format!("damping must be non-negative, got {}", g.damping_d));
        }
        match g.tech {
            Tech::Sg | Tech::GfmVsm | Tech::GfmDroop => {
                if g.inertia_m <= 0.0 {
                    report.error(&loc, format!("{} requires inertia M > 0", g.tech));
                }
                if g.damping_d <= 0.0 {
                    report.error(&loc, format!("{} requires damping D > 0", g.tech));
                }
            }
            Tech::Gfl => {}
        }
        let dispatch_mw = g.dispatch_p * case.base_mva;
        if dispatch_mw < -DISPATCH_SLACK * case.base_mva
            || dispatch_mw > g.rating_mva * (1.0 + DISPATCH_SLACK)
        {
            report.error(
                &loc,
                format!(
                    "dispatch {:.6} MW outside [0, rating {:.6} MVA]",
                    dispatch_mw, g.rating_mva
                ),
            );
        }
    }

    for (k, load) in case.loads.iter().enumerate() {
        if !ids.contains(&load.bus) {
            report.error(format!("load {}", k + 1), format!("refers to nonexistent bus {}", load.bus));
        }
    }

    if !case.generators.iter().any(|g| g.tech.is_dynamic()) {
        report.issues.push(Issue {
            severity: Severity::Precondition,
            location: "case".into(),
            message: "no dynamic (non-GFL) generator present".into(),
        });
    }

    report
}
