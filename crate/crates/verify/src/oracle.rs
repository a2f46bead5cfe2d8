//! Reference computations that share no numerical code with `wsbo`: the
//! kernels are re-derived, the posterior uses an explicit inverse, and
//! expectations are estimated by simulation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use wsbo::{JointHyperParams, KernelFamily, KernelParams, TrainingSet};

pub fn kernel(k: &KernelParams, x: &[f64], y: &[f64]) -> f64 {
    let r2: f64 = x
        .iter()
        .zip(y)
        .zip(k.length_scales())
        .map(|((a, b), l)| ((a - b) / l).powi(2))
        .sum();
    match k.family() {
        KernelFamily::SquaredExponential => k.amplitude() * (-0.5 * r2).exp(),
        KernelFamily::Matern52 => {
            let s = (5.0 * r2).sqrt();
            k.amplitude() * (1.0 + s + s * s / 3.0) * (-s).exp()
        }
    }
}

pub fn joint_kernel(hp: &JointHyperParams, ta: usize, x: &[f64], tb: usize, y: &[f64]) -> f64 {
    let mut v = kernel(&hp.base, x, y);
    if ta == tb && ta >= 1 {
        v += kernel(&hp.deltas[ta - 1], x, y);
    }
    v
}

/// Posterior of `f(0, ·)` via `(K + D + εI)⁻¹` formed explicitly.
pub struct DenseGp {
    hp: JointHyperParams,
    tasks: Vec<usize>,
    points: Vec<Vec<f64>>,
    inverse: DMatrix<f64>,
    resid: DVector<f64>,
}

impl DenseGp {
    /// `jitter` is added to every diagonal entry, matching the regularized model being checked.
    pub fn new(hp: &JointHyperParams, training: &TrainingSet, jitter: f64) -> Option<Self> {
        let obs = training.observations();
        let n = obs.len();
        let mut k = DMatrix::from_fn(n, n, |i, j| joint_kernel(hp, obs[i].task, &obs[i].point, obs[j].task, &obs[j].point));
        for (i, o) in obs.iter().enumerate() {
            k[(i, i)] += o.noise_var + jitter;
        }
        Some(Self {
            hp: hp.clone(),
            tasks: obs.iter().map(|o| o.task).collect(),
            points: obs.iter().map(|o| o.point.clone()).collect(),
            inverse: k.try_inverse()?,
            resid: DVector::from_iterator(n, obs.iter().map(|o| o.value - hp.mean_const)),
        })
    }

    fn cross(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.points.len(),
            self.tasks.iter().zip(&self.points).map(|(t, p)| joint_kernel(&self.hp, 0, x, *t, p)),
        )
    }

    pub fn mean(&self, x: &[f64]) -> f64 {
        self.hp.mean_const + (self.cross(x).transpose() * &self.inverse * &self.resid)[0]
    }

    pub fn cov(&self, x: &[f64], y: &[f64]) -> f64 {
        kernel(&self.hp.base, x, y) - (self.cross(x).transpose() * &self.inverse * self.cross(y))[0]
    }
}

/// Monte-Carlo estimate and standard error of `E[max_i (a_i + b_i Z)]`.
pub fn mc_expected_max<R: Rng>(a: &[f64], b: &[f64], draws: usize, rng: &mut R) -> (f64, f64) {
    mean_and_se((0..draws).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        a.iter().zip(b).map(|(a, b)| a + b * z).fold(f64::NEG_INFINITY, f64::max)
    }))
}

/// Nested-simulation knowledge gradient: draw the next observation at `x`,
/// condition the dense posterior on it, and average the gain in the largest
/// posterior mean over `disc`.
pub fn mc_knowledge_gradient<R: Rng>(gp: &DenseGp, x: &[f64], disc: &[Vec<f64>], noise_var: f64, draws: usize, rng: &mut R) -> (f64, f64) {
    let means: Vec<f64> = disc.iter().map(|p| gp.mean(p)).collect();
    let cross: Vec<f64> = disc.iter().map(|p| gp.cov(p, x)).collect();
    let mx = gp.mean(x);
    let pred_var = gp.cov(x, x) + noise_var;
    let best_now = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mean_and_se((0..draws).map(|_| {
        let z: f64 = StandardNormal.sample(rng);
        let y = mx + pred_var.sqrt() * z;
        let updated = means
            .iter()
            .zip(&cross)
            .map(|(m, c)| m + c / pred_var * (y - mx))
            .fold(f64::NEG_INFINITY, f64::max);
        updated - best_now
    }))
}

/// Central differences of `f` at `x` with step `h` in every coordinate.
pub fn central_gradient<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn mean_and_se(samples: impl Iterator<Item = f64>) -> (f64, f64) {
    // Welford
    let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
    for s in samples {
        n += 1.0;
        let d = s - mean;
        mean += d / n;
        m2 += d * (s - mean);
    }
    (mean, (m2 / (n - 1.0) / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_library() {
        let p = KernelParams::new(KernelFamily::Matern52, 1.7, vec![0.4, 2.0]).unwrap();
        let q = KernelParams::new(KernelFamily::SquaredExponential, 0.3, vec![1.1, 0.2]).unwrap();
        for k in [p, q] {
            let (x, y) = ([0.1, -0.3], [0.5, 0.25]);
            assert!((kernel(&k, &x, &y) - k.eval(&x, &y).unwrap()).abs() < 1e-14);
        }
    }

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -1.0];
        let (m, se) = mean_and_se(xs.iter().copied());
        assert!((m - 1.625).abs() < 1e-15);
        let var = xs.iter().map(|x| (x - 1.625f64).powi(2)).sum::<f64>() / 3.0;
        assert!((se - (var / 4.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn central_gradient_of_quadratic() {
        let g = central_gradient(|v| v[0] * v[0] + 3.0 * v[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8 && (g[1] - 3.0).abs() < 1e-8);
    }
}
