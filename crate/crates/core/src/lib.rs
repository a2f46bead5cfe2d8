//! Warm-start Bayesian optimization.
//!
//! The current objective `f(0, ·)` is modelled jointly with previously solved
//! objectives `f(ℓ, ·) = f(0, ·) + δ_ℓ(·)`, where every `δ_ℓ` is an independent
//! Gaussian process. Evaluations are chosen with the knowledge gradient over a
//! discretized domain. Expected improvement (EGO) and single-task knowledge
//! gradient are provided as baselines, together with the noisy Rosenbrock and
//! assemble-to-order benchmark suites.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod acquisition;
pub mod benchmarks;
pub mod design;
mod error;
pub mod gp;
pub mod hyper;
pub mod kernels;
pub mod normal;
pub mod rng;
pub mod runner;

pub use error::{Error, Result};
pub use gp::{FitOptions, Observation, Posterior, TrainingSet};
pub use kernels::{DesignPoint, JointHyperParams, KernelFamily, KernelParams, TaskPoint};
