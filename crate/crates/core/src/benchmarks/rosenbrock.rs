//! Noisy two-dimensional Rosenbrock variants on `[-2, 2]²`.
//!
//! The functions are minimization objectives; observations returned by
//! [`RosenbrockVariant::eval`] are negated so every suite is maximized.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::design::BoxDomain;
use crate::gp::Observation;
use crate::{Error, Result};

pub const DEFAULT_NOISE_VAR: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RosenbrockId {
    Rb1,
    Rb2,
    Rb3,
    Rb4,
}

impl RosenbrockId {
    pub const ALL: [RosenbrockId; 4] = [RosenbrockId::Rb1, RosenbrockId::Rb2, RosenbrockId::Rb3, RosenbrockId::Rb4];
}

impl fmt::Display for RosenbrockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = match self {
            RosenbrockId::Rb1 => 1,
            RosenbrockId::Rb2 => 2,
            RosenbrockId::Rb3 => 3,
            RosenbrockId::Rb4 => 4,
        };
        write!(f, "RB{n}")
    }
}

impl FromStr for RosenbrockId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "RB1" => Ok(RosenbrockId::Rb1),
            "RB2" => Ok(RosenbrockId::Rb2),
            "RB3" => Ok(RosenbrockId::Rb3),
            "RB4" => Ok(RosenbrockId::Rb4),
            other => Err(Error::invalid(format!("unknown Rosenbrock variant '{other}'"))),
        }
    }
}

fn rb1(x1: f64, x2: f64) -> f64 {
    (1.0 - x1).powi(2) + 100.0 * (x2 - x1 * x1).powi(2)
}

fn rb2(x1: f64, x2: f64) -> f64 {
    rb1(x1, x2) + 0.01 * (10.0 * x1 + 5.0 * x2).sin()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RosenbrockVariant {
    pub id: RosenbrockId,
    pub noise_var: f64,
}

impl RosenbrockVariant {
    pub fn new(id: RosenbrockId, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid(format!("noise variance must be finite and >= 0, got {noise_var}")));
        }
        Ok(Self { id, noise_var })
    }

    pub fn with_default_noise(id: RosenbrockId) -> Self {
        Self {
            id,
            noise_var: DEFAULT_NOISE_VAR,
        }
    }

    pub fn domain() -> BoxDomain {
        BoxDomain::cube(-2.0, 2.0, 2).expect("valid box")
    }

    /// Noiseless value of the (minimization) objective.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        Self::domain().check(x)?;
        let (x1, x2) = (x[0], x[1]);
        Ok(match self.id {
            RosenbrockId::Rb1 => rb1(x1, x2),
            RosenbrockId::Rb2 => rb2(x1, x2),
            RosenbrockId::Rb3 => rb1(x1 + 0.01, x2 - 0.005),
            RosenbrockId::Rb4 => rb2(x1, x2) + 0.01 * x1,
        })
    }

    /// Noisy, negated evaluation on the current task.
    pub fn eval<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Observation> {
        let truth = -self.value(x)?;
        let noise = if self.noise_var > 0.0 {
            Normal::new(0.0, self.noise_var.sqrt()).expect("positive sd").sample(rng)
        } else {
            0.0
        };
        Observation::new(0, x.to_vec(), truth + noise, self.noise_var)
    }
}

pub fn rosenbrock_value(variant: &RosenbrockVariant, x: &[f64]) -> Result<f64> {
    variant.value(x)
}

pub fn rosenbrock_eval<R: Rng + ?Sized>(variant: &RosenbrockVariant, x: &[f64], rng: &mut R) -> Result<Observation> {
    variant.eval(x, rng)
}
