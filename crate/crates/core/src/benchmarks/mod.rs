//! Benchmark suites: the noisy Rosenbrock family and an assemble-to-order
//! inventory simulator.

pub mod ato;
pub mod rosenbrock;

pub use ato::{ato_simulate, ato_variant, AtoConfig, AtoVariant, SimResult};
pub use rosenbrock::{RosenbrockId, RosenbrockVariant};
