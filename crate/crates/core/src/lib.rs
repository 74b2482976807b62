//! Small-signal synchronization analysis for power networks that mix
//! synchronous generators with grid-forming and grid-following inverters.
//!
//! The pipeline runs in this order:
//!
//! 1. [`model`]: load and validate a [`NetworkCase`].
//! 2. [`powerflow`]: build the bus admittance matrix and solve the AC power flow.
//! 3. [`reduce`]: fold loads and grid-following units into constant admittances and
//!    Kron-reduce the network onto the dynamic generator buses.
//! 4. [`linearize`]: build the Laplacian at the equilibrium and assemble the
//!    `(2n-1)`-state swing model relative to a reference machine.
//! 5. [`modal`]: eigenvalues, mode classification and the stability verdict.
//! 6. [`simulate`]: exact discrete-time response to small disturbances and
//!    frequency metrics (nadir, rise/peak/settling time).
//! 7. [`sweep`]: seeded Monte Carlo screening over inertia, damping, loading and
//!    technology mix.
//!
//! [`oracles`] holds independent cross-checks for the numerically delicate steps.
//! [`study`] chains steps 2-4 for the common case.

pub mod error;
pub mod linearize;
pub mod modal;
pub mod model;
pub mod oracles;
pub mod powerflow;
pub mod reduce;
pub mod report;
pub mod simulate;
pub mod study;
pub mod sweep;

pub use error::{Error, Result};
pub use model::{BranchSpec, BusKind, BusSpec, GeneratorSpec, LoadSpec, NetworkCase, Tech};
pub use num_complex::Complex64;
