//! Stationary kernel families and the composite warm-start covariance over
//! `(task, design)` pairs.
//!
//! For tasks `ℓ, m` and designs `x, x'` the joint covariance is
//! `Σ₀(x, x') + 1{ℓ = m ≥ 1} Σ_ℓ(x, x')`, and the joint mean is the constant
//! prior mean of the current task for every task.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::{Error, Result};

/// A point of the design space, in problem units.
pub type DesignPoint = Vec<f64>;

const SQRT_5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    SquaredExponential,
    #[default]
    Matern52,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::SquaredExponential => "squared-exponential",
            KernelFamily::Matern52 => "matern-5/2",
        }
    }
}

impl fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "squared-exponential" | "se" | "rbf" => Ok(KernelFamily::SquaredExponential),
            "matern-5/2" | "matern52" | "matern" => Ok(KernelFamily::Matern52),
            other => Err(Error::invalid(format!("unknown kernel family '{other}'"))),
        }
    }
}

/// Amplitude and per-dimension length scales of one stationary kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelParams {
    family: KernelFamily,
    amplitude: f64,
    length_scales: Vec<f64>,
}

impl KernelParams {
    pub fn new(family: KernelFamily, amplitude: f64, length_scales: Vec<f64>) -> Result<Self> {
        if !(amplitude > 0.0 && amplitude.is_finite()) {
            return Err(Error::invalid(format!(
                "kernel amplitude must be positive and finite, got {amplitude}"
            )));
        }
        if length_scales.is_empty() {
            return Err(Error::invalid("kernel needs at least one length scale"));
        }
        if let Some(bad) = length_scales.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(format!(
                "length scales must be positive and finite, got {bad}"
            )));
        }
        Ok(Self {
            family,
            amplitude,
            length_scales,
        })
    }

    /// Same scale in every dimension.
    pub fn isotropic(family: KernelFamily, amplitude: f64, length_scale: f64, dim: usize) -> Result<Self> {
        Self::new(family, amplitude, vec![length_scale; dim])
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    pub fn dim(&self) -> usize {
        self.length_scales.len()
    }

    /// Covariance `k(x, x2)`, checking dimensions.
    pub fn eval(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(x2)?;
        Ok(self.eval_unchecked(x, x2))
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::invalid(format!(
                "point has dimension {} but kernel has {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn scaled_sq_dist(&self, x: &[f64], x2: &[f64]) -> f64 {
        x.iter()
            .zip(x2)
            .zip(&self.length_scales)
            .map(|((a, b), l)| {
                let u = (a - b) / l;
                u * u
            })
            .sum()
    }

    pub(crate) fn eval_unchecked(&self, x: &[f64], x2: &[f64]) -> f64 {
        let r2 = self.scaled_sq_dist(x, x2);
        match self.family {
            KernelFamily::SquaredExponential => self.amplitude * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                self.amplitude * (1.0 + SQRT_5 * r + 5.0 / 3.0 * r2) * (-SQRT_5 * r).exp()
            }
        }
    }

    /// Writes `∂k/∂ln α` followed by `∂k/∂ln β_i` into `out` and returns `k`.
    pub(crate) fn eval_log_grad(&self, x: &[f64], x2: &[f64], out: &mut [f64]) -> f64 {
        debug_assert_eq!(out.len(), self.dim() + 1);
        let r2 = self.scaled_sq_dist(x, x2);
        // ∂k/∂ln β_i = radial · (Δ_i / β_i)²
        let (k, radial) = match self.family {
            KernelFamily::SquaredExponential => {
                let k = self.amplitude * (-0.5 * r2).exp();
                (k, k)
            }
            KernelFamily::Matern52 => {
                let r = r2.sqrt();
                let e = (-SQRT_5 * r).exp();
                let k = self.amplitude * (1.0 + SQRT_5 * r + 5.0 / 3.0 * r2) * e;
                (k, self.amplitude * e * 5.0 / 3.0 * (1.0 + SQRT_5 * r))
            }
        };
        out[0] = k;
        for (i, ((a, b), l)) in x.iter().zip(x2).zip(&self.length_scales).enumerate() {
            let u = (a - b) / l;
            out[i + 1] = radial * u * u;
        }
        k
    }
}

/// An input of the joint process: a task index (0 is the current task) and a design.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskPoint {
    pub task: usize,
    pub point: DesignPoint,
}

impl TaskPoint {
    pub fn new(task: usize, point: DesignPoint) -> Self {
        Self { task, point }
    }

    pub fn current(point: DesignPoint) -> Self {
        Self { task: 0, point }
    }
}

/// Hyperparameters of the joint model: constant prior mean, the current-task
/// kernel `Σ₀` and one delta kernel `Σ_ℓ` per previous task.
#[derive(Clone, Debug, PartialEq)]
pub struct JointHyperParams {
    pub mean_const: f64,
    pub base: KernelParams,
    pub deltas: Vec<KernelParams>,
}

impl JointHyperParams {
    pub fn new(mean_const: f64, base: KernelParams, deltas: Vec<KernelParams>) -> Result<Self> {
        if !mean_const.is_finite() {
            return Err(Error::invalid("prior mean must be finite"));
        }
        if let Some(d) = deltas.iter().find(|d| d.dim() != base.dim()) {
            return Err(Error::invalid(format!(
                "delta kernel dimension {} differs from base dimension {}",
                d.dim(),
                base.dim()
            )));
        }
        Ok(Self {
            mean_const,
            base,
            deltas,
        })
    }

    /// Single-task model.
    pub fn single_task(mean_const: f64, base: KernelParams) -> Self {
        Self {
            mean_const,
            base,
            deltas: Vec::new(),
        }
    }

    /// The same base kernel and mean with all delta kernels dropped.
    pub fn without_deltas(&self) -> Self {
        Self::single_task(self.mean_const, self.base.clone())
    }

    /// Number of previous tasks `M`.
    pub fn n_previous(&self) -> usize {
        self.deltas.len()
    }

    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    /// Joint prior mean; identical for every task.
    pub fn mean(&self, _tp: &TaskPoint) -> f64 {
        self.mean_const
    }

    pub(crate) fn check(&self, tp: &TaskPoint) -> Result<()> {
        if tp.task > self.n_previous() {
            return Err(Error::invalid(format!(
                "task index {} exceeds number of previous tasks {}",
                tp.task,
                self.n_previous()
            )));
        }
        self.base.check_dim(&tp.point)
    }

    pub fn cov(&self, a: &TaskPoint, b: &TaskPoint) -> Result<f64> {
        self.check(a)?;
        self.check(b)?;
        Ok(self.cov_unchecked(a.task, &a.point, b.task, &b.point))
    }

    pub(crate) fn cov_unchecked(&self, ta: usize, xa: &[f64], tb: usize, xb: &[f64]) -> f64 {
        let base = self.base.eval_unchecked(xa, xb);
        if ta == tb && ta >= 1 {
            base + self.deltas[ta - 1].eval_unchecked(xa, xb)
        } else {
            base
        }
    }

    /// Gram matrix `K(X, X)` of the joint covariance.
    pub fn gram(&self, points: &[TaskPoint]) -> Result<DMatrix<f64>> {
        for tp in points {
            self.check(tp)?;
        }
        let n = points.len();
        let mut k = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in j..n {
                let v = self.cov_unchecked(points[i].task, &points[i].point, points[j].task, &points[j].point);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Ok(k)
    }
}

/// Free-function form of [`KernelParams::eval`].
pub fn kernel_eval(params: &KernelParams, x: &[f64], x2: &[f64]) -> Result<f64> {
    params.eval(x, x2)
}

/// Free-function form of [`JointHyperParams::mean`].
pub fn joint_mean(hp: &JointHyperParams, tp: &TaskPoint) -> f64 {
    hp.mean(tp)
}

/// Free-function form of [`JointHyperParams::cov`].
pub fn joint_cov(hp: &JointHyperParams, a: &TaskPoint, b: &TaskPoint) -> Result<f64> {
    hp.cov(a, b)
}

/// Free-function form of [`JointHyperParams::gram`].
pub fn gram(hp: &JointHyperParams, points: &[TaskPoint]) -> Result<DMatrix<f64>> {
    hp.gram(points)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    const FAMILIES: [KernelFamily; 2] = [KernelFamily::SquaredExponential, KernelFamily::Matern52];

    fn random_params(rng: &mut impl Rng, family: KernelFamily, dim: usize) -> KernelParams {
        let ls = (0..dim).map(|_| rng.random_range(0.2..2.0)).collect();
        KernelParams::new(family, rng.random_range(0.1..5.0), ls).unwrap()
    }

    fn random_hyper(rng: &mut impl Rng, family: KernelFamily, dim: usize, m: usize) -> JointHyperParams {
        let base = random_params(rng, family, dim);
        let deltas = (0..m).map(|_| random_params(rng, family, dim)).collect();
        JointHyperParams::new(rng.random_range(-1.0..1.0), base, deltas).unwrap()
    }

    fn random_point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
        (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_distance_gives_amplitude() {
        for family in FAMILIES {
            let p = KernelParams::new(family, 2.5, vec![0.3, 1.7]).unwrap();
            assert_eq!(p.eval(&[0.4, -1.0], &[0.4, -1.0]).unwrap(), 2.5);
        }
    }

    #[test]
    fn squared_exponential_reference_value() {
        let p = KernelParams::isotropic(KernelFamily::SquaredExponential, 1.0, 1.0, 2).unwrap();
        let k = p.eval(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((k - (-12.5f64).exp()).abs() < 1e-18);
        assert!((k - 3.727e-6).abs() < 1e-9);
    }

    #[test]
    fn matern_reference_value() {
        // r = 1: (1 + √5 + 5/3) e^{-√5}
        let p = KernelParams::isotropic(KernelFamily::Matern52, 1.0, 2.0, 1).unwrap();
        let expect = (1.0 + 5f64.sqrt() + 5.0 / 3.0) * (-(5f64.sqrt())).exp();
        assert!((p.eval(&[0.0], &[2.0]).unwrap() - expect).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(KernelParams::new(KernelFamily::Matern52, 0.0, vec![1.0]).is_err());
        assert!(KernelParams::new(KernelFamily::Matern52, 1.0, vec![1.0, -1.0]).is_err());
        assert!(KernelParams::new(KernelFamily::Matern52, f64::NAN, vec![1.0]).is_err());
        let p = KernelParams::new(KernelFamily::Matern52, 1.0, vec![1.0, 1.0]).unwrap();
        assert!(matches!(p.eval(&[0.0], &[0.0, 1.0]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn symmetric_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for family in FAMILIES {
            let p = random_params(&mut rng, family, 3);
            for _ in 0..100 {
                let (a, b) = (random_point(&mut rng, 3), random_point(&mut rng, 3));
                assert_eq!(p.eval(&a, &b).unwrap(), p.eval(&b, &a).unwrap());
            }
        }
    }

    #[test]
    fn constant_joint_mean() {
        let base = KernelParams::isotropic(KernelFamily::Matern52, 1.0, 1.0, 2).unwrap();
        let hp = JointHyperParams::new(0.0, base.clone(), vec![base.clone(); 5]).unwrap();
        assert_eq!(joint_mean(&hp, &TaskPoint::new(3, vec![0.1, 0.2])), 0.0);
        let hp = JointHyperParams::new(-2.5, base.clone(), vec![base; 5]).unwrap();
        let x = vec![0.7, -0.3];
        assert_eq!(hp.mean(&TaskPoint::new(0, x.clone())), hp.mean(&TaskPoint::new(5, x)));
        assert_eq!(hp.mean(&TaskPoint::new(2, vec![9.0, 9.0])), -2.5);
    }

    #[test]
    fn composite_covariance_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hp = random_hyper(&mut rng, KernelFamily::Matern52, 2, 2);
        let (x, x2) = (random_point(&mut rng, 2), random_point(&mut rng, 2));
        let base = hp.base.eval(&x, &x2).unwrap();
        let c = |ta, tb| joint_cov(&hp, &TaskPoint::new(ta, x.clone()), &TaskPoint::new(tb, x2.clone())).unwrap();
        assert_eq!(c(1, 2), base);
        assert_eq!(c(0, 0), base);
        assert_eq!(c(0, 1), base);
        assert_eq!(c(2, 2), base + hp.deltas[1].eval(&x, &x2).unwrap());
        let same = hp.cov(&TaskPoint::new(1, x.clone()), &TaskPoint::new(1, x.clone())).unwrap();
        assert_eq!(same, hp.base.amplitude() + hp.deltas[0].amplitude());
        assert!(hp.cov(&TaskPoint::new(3, x.clone()), &TaskPoint::new(0, x)).is_err());
    }

    #[test]
    fn singleton_gram() {
        let base = KernelParams::isotropic(KernelFamily::Matern52, 1.5, 1.0, 2).unwrap();
        let hp = JointHyperParams::single_task(0.0, base);
        let tp = TaskPoint::current(vec![0.0, 1.0]);
        let g = gram(&hp, std::slice::from_ref(&tp)).unwrap();
        assert_eq!(g.shape(), (1, 1));
        assert_eq!(g[(0, 0)], hp.cov(&tp, &tp).unwrap());
    }

    #[test]
    fn gram_is_symmetric_and_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..20 {
            let family = FAMILIES[trial % 2];
            let m = 3;
            let hp = random_hyper(&mut rng, family, 2, m);
            let n = rng.random_range(1..=50);
            let pts: Vec<_> = (0..n)
                .map(|_| TaskPoint::new(rng.random_range(0..=m), random_point(&mut rng, 2)))
                .collect();
            let g = hp.gram(&pts).unwrap();
            assert_eq!(g, g.transpose());
            let eig = g.clone().symmetric_eigen().eigenvalues;
            let (lo, hi) = (eig.min(), eig.max());
            assert!(lo >= -1e-8 * hi, "min eigenvalue {lo} vs max {hi}");
        }
    }

    #[test]
    fn cross_task_ignores_deltas() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let hp = random_hyper(&mut rng, KernelFamily::Matern52, 2, 3);
        let mut other = hp.clone();
        for d in &mut other.deltas {
            *d = random_params(&mut rng, KernelFamily::SquaredExponential, 2);
        }
        for _ in 0..50 {
            let a = TaskPoint::new(rng.random_range(0..=3), random_point(&mut rng, 2));
            let mut tb = rng.random_range(0..=3);
            if tb == a.task {
                tb = (tb + 1) % 4;
            }
            let b = TaskPoint::new(tb, random_point(&mut rng, 2));
            assert_eq!(hp.cov(&a, &b).unwrap(), other.cov(&a, &b).unwrap());
        }
    }

    #[test]
    fn log_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for family in FAMILIES {
            let p = random_params(&mut rng, family, 3);
            let (x, y) = (random_point(&mut rng, 3), random_point(&mut rng, 3));
            let mut g = vec![0.0; 4];
            p.eval_log_grad(&x, &y, &mut g);
            let h = 1e-6;
            let mut logs: Vec<f64> = std::iter::once(p.amplitude()).chain(p.length_scales().iter().copied()).map(f64::ln).collect();
            for i in 0..4 {
                let orig = logs[i];
                let mut at = |v: f64| {
                    logs[i] = v;
                    let q = KernelParams::new(family, logs[0].exp(), logs[1..].iter().map(|l| l.exp()).collect()).unwrap();
                    q.eval(&x, &y).unwrap()
                };
                let fd = (at(orig + h) - at(orig - h)) / (2.0 * h);
                logs[i] = orig;
                assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()), "{family} param {i}: {fd} vs {}", g[i]);
            }
        }
    }

    proptest! {
        #[test]
        fn stationary_under_translation(
            x in prop::collection::vec(-2.0f64..2.0, 2),
            y in prop::collection::vec(-2.0f64..2.0, 2),
            shift in prop::collection::vec(-3.0f64..3.0, 2),
            ta in 0usize..3, tb in 0usize..3,
            matern in any::<bool>(),
        ) {
            let family = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            let base = KernelParams::new(family, 1.3, vec![0.7, 1.1]).unwrap();
            let delta = KernelParams::new(family, 0.4, vec![0.5, 0.9]).unwrap();
            let hp = JointHyperParams::new(0.0, base, vec![delta.clone(), delta]).unwrap();
            let xs: Vec<f64> = x.iter().zip(&shift).map(|(a, s)| a + s).collect();
            let ys: Vec<f64> = y.iter().zip(&shift).map(|(a, s)| a + s).collect();
            let before = hp.cov(&TaskPoint::new(ta, x), &TaskPoint::new(tb, y)).unwrap();
            let after = hp.cov(&TaskPoint::new(ta, xs), &TaskPoint::new(tb, ys)).unwrap();
            prop_assert!((before - after).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_coordinate_distance(d1 in 0.0f64..4.0, d2 in 0.0f64..4.0, matern in any::<bool>()) {
            let family = if matern { KernelFamily::Matern52 } else { KernelFamily::SquaredExponential };
            let p = KernelParams::new(family, 2.0, vec![0.8, 1.3]).unwrap();
            let (near, far) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let kn = p.eval(&[0.0, 0.5], &[near, 0.5]).unwrap();
            let kf = p.eval(&[0.0, 0.5], &[far, 0.5]).unwrap();
            prop_assert!(kf <= kn);
            prop_assert!(kf >= 0.0 && kn <= 2.0);
        }
    }
}
