//! Power flow, reduction and linearization chained for one case.

use crate::error::{Error, Result};
use crate::linearize::{assemble_state_matrix, build_laplacian, machines_from_case, DynamicMachine, Laplacian, StateSpaceModel};
use crate::model::NetworkCase;
use crate::powerflow::{build_admittance, solve_power_flow, AdmittanceMatrix, PowerFlowOptions, PowerFlowSolution};
use crate::reduce::{reduce_network, ReducedNetwork};

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StudyOptions {
    pub powerflow: PowerFlowOptions,
    /// Generator whose bus becomes the reference machine.
    pub reference_generator: Option<u32>,
}

#[derive(Debug, Clone)]
pub struct Study {
    pub case: NetworkCase,
    pub admittance: AdmittanceMatrix,
    pub solution: PowerFlowSolution,
    pub reduced: ReducedNetwork,
    pub laplacian: Laplacian,
    pub model: StateSpaceModel,
}

/// The dynamic machine at the slack bus if there is one, otherwise the machine
/// on the lowest-numbered bus.
pub fn default_reference_bus(case: &NetworkCase, machines: &[DynamicMachine]) -> Option<u32> {
    let slack = case.slack_bus().map(|b| b.id);
    machines
        .iter()
        .find(|m| Some(m.bus) == slack)
        .or_else(|| machines.first())
        .map(|m| m.bus)
}

pub fn reference_bus(case: &NetworkCase, machines: &[DynamicMachine], generator: Option<u32>) -> Result<u32> {
    match generator {
        Some(id) => {
            let g = case.generator(id).ok_or(Error::UnknownGenerator(id))?;
            if !g.tech.is_dynamic() {
                return Err(Error::InvalidConfig(format!(
                    "reference generator {id} is grid-following and has no swing dynamics"
                )));
            }
            Ok(g.bus)
        }
        None => default_reference_bus(case, machines).ok_or(Error::NoDynamicGenerator),
    }
}

pub fn run_study(case: &NetworkCase, opts: StudyOptions) -> Result<Study> {
    let machines = machines_from_case(case);
    if machines.is_empty() {
        return Err(Error::NoDynamicGenerator);
    }
    let reference = reference_bus(case, &machines, opts.reference_generator)?;
    let admittance = build_admittance(case)?;
    let solution = solve_power_flow(case, &admittance, opts.powerflow)?;
    if !solution.converged {
        return Err(Error::NotConverged { iterations: solution.iterations, max_mismatch: solution.max_mismatch });
    }
    let reduced = reduce_network(case, &admittance, &solution)?;
    let laplacian = build_laplacian(&reduced)?;
    let model = assemble_state_matrix(&laplacian, &machines, reference, case.base_freq)?;
    Ok(Study { case: case.clone(), admittance, solution, reduced, laplacian, model })
}
