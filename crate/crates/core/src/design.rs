//! Box domains and Latin-hypercube designs.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::kernels::DesignPoint;
use crate::{Error, Result};

/// Axis-aligned box `[lower_i, upper_i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("domain bounds must be nonempty and of equal length"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(Error::invalid("domain lower bounds must be below upper bounds"));
        }
        Ok(Self { lower, upper })
    }

    pub fn cube(lower: f64, upper: f64, dim: usize) -> Result<Self> {
        Self::new(vec![lower; dim], vec![upper; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| *v >= *l && *v <= *u)
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!("point has dimension {} but domain has {}", x.len(), self.dim())));
        }
        if !self.contains(x) {
            return Err(Error::invalid(format!("point {x:?} lies outside the domain")));
        }
        Ok(())
    }
}

/// `n` points, one in each of `n` equal strata per dimension, jittered uniformly inside the stratum.
pub fn latin_hypercube<R: Rng + ?Sized>(domain: &BoxDomain, n: usize, rng: &mut R) -> Vec<DesignPoint> {
    let d = domain.dim();
    let mut points = vec![vec![0.0; d]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..d {
        perm.shuffle(rng);
        let (lo, width) = (domain.lower[k], domain.upper[k] - domain.lower[k]);
        for (i, p) in points.iter_mut().enumerate() {
            let u = (perm[i] as f64 + rng.random::<f64>()) / n as f64;
            p[k] = (lo + u * width).clamp(domain.lower[k], domain.upper[k]);
        }
    }
    points
}
