use std::path::PathBuf;

use thiserror::Error;

use crate::model::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid case: {0}")]
    Validation(ValidationReport),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("singular power-flow Jacobian at iteration {iteration} (voltage collapse or infeasible dispatch)")]
    SingularJacobian { iteration: usize },

    #[error("power flow did not converge (max mismatch {max_mismatch:e} pu after {iterations} iterations)")]
    NotConverged { iterations: usize, max_mismatch: f64 },

    #[error("bus {bus} has zero voltage at the equilibrium")]
    ZeroVoltage { bus: u32 },

    #[error("zero pivot while eliminating bus {bus} (|Y_pp| = {magnitude:e})")]
    ZeroPivot { bus: u32, magnitude: f64 },

    #[error("no dynamic (non-GFL) generator present; synchronization is infeasible")]
    NoDynamicGenerator,

    #[error("generator at bus {bus} has zero inertia; the swing model is undefined")]
    ZeroInertia { bus: u32 },

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("damping factors are heterogeneous (relative spread {spread:e})")]
    HeterogeneousDamping { spread: f64 },

    #[error("time step {dt} s exceeds the resolution limit {limit} s")]
    Resolution { dt: f64, limit: f64 },

    #[error("no event: trace never leaves the baseline")]
    NoEvent,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("total generator capacity is zero")]
    ZeroCapacity,

    #[error("unknown generator {0}")]
    UnknownGenerator(u32),

    #[error("unknown bus {0}")]
    UnknownBus(u32),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
