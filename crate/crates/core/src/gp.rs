//! Gaussian-process posterior over the joint `(task, design)` space with
//! per-observation noise variances, queried on the current task.

use nalgebra::{DMatrix, DVector};

use crate::kernels::{DesignPoint, JointHyperParams, TaskPoint};
use crate::{Error, Result};

/// One evaluation `(ℓ, x, y_ℓ(x), λ_ℓ(x))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub task: usize,
    pub point: DesignPoint,
    pub value: f64,
    pub noise_var: f64,
}

impl Observation {
    pub fn new(task: usize, point: DesignPoint, value: f64, noise_var: f64) -> Result<Self> {
        if !(noise_var >= 0.0) || !noise_var.is_finite() {
            return Err(Error::invalid(format!("noise variance must be finite and >= 0, got {noise_var}")));
        }
        if !value.is_finite() {
            return Err(Error::invalid("observed value must be finite"));
        }
        Ok(Self {
            task,
            point,
            value,
            noise_var,
        })
    }

    pub fn task_point(&self) -> TaskPoint {
        TaskPoint::new(self.task, self.point.clone())
    }
}

/// Ordered collection of observations used to fit the joint model.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingSet {
    observations: Vec<Observation>,
}

impl TrainingSet {
    pub fn new(observations: Vec<Observation>) -> Self {
        Self { observations }
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn push(&mut self, obs: Observation) {
        self.observations.push(obs);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Observation> {
        self.observations.iter()
    }

    pub fn task_points(&self) -> Vec<TaskPoint> {
        self.observations.iter().map(Observation::task_point).collect()
    }
}

impl From<Vec<Observation>> for TrainingSet {
    fn from(observations: Vec<Observation>) -> Self {
        Self::new(observations)
    }
}

impl FromIterator<Observation> for TrainingSet {
    fn from_iter<I: IntoIterator<Item = Observation>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

/// Diagonal jitter policy for the factorization of `K + D`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    /// Initial jitter relative to the base kernel amplitude.
    pub jitter_rel: f64,
    /// Number of ×10 escalations after the first failed attempt.
    pub max_retries: u32,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            jitter_rel: 1e-8,
            max_retries: 3,
        }
    }
}

/// Fitted posterior. Immutable; conditioning returns a new state.
#[derive(Clone, Debug)]
pub struct Posterior {
    hyper: JointHyperParams,
    training: TrainingSet,
    options: FitOptions,
    jitter: f64,
    /// Lower Cholesky factor of `K(X,X) + D(X) + jitter·I`.
    factor: DMatrix<f64>,
    /// `[K + D]⁻¹ (Y − μ₀)`.
    weights: DVector<f64>,
}

/// Jittered Cholesky factor of `matrix` and the jitter that succeeded.
pub(crate) fn factorize(matrix: DMatrix<f64>, amplitude: f64, options: FitOptions) -> Result<(DMatrix<f64>, f64)> {
    let n = matrix.nrows();
    let mut tried = Vec::new();
    let mut jitter = options.jitter_rel * amplitude;
    for attempt in 0..=options.max_retries {
        if attempt > 0 {
            jitter *= 10.0;
        }
        let mut m = matrix.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        tried.push(jitter);
        if let Some(chol) = m.cholesky() {
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::IllConditioned { jitters: tried })
}

impl Posterior {
    pub fn fit(hyper: JointHyperParams, training: TrainingSet) -> Result<Self> {
        Self::fit_with(hyper, training, FitOptions::default())
    }

    pub fn fit_with(hyper: JointHyperParams, training: TrainingSet, options: FitOptions) -> Result<Self> {
        let points = training.task_points();
        let mut k = hyper.gram(&points)?;
        for (i, obs) in training.iter().enumerate() {
            if !(obs.noise_var >= 0.0) {
                return Err(Error::invalid(format!("observation {i} has negative noise variance")));
            }
            k[(i, i)] += obs.noise_var;
        }
        let (factor, jitter) = factorize(k, hyper.base.amplitude(), options)?;
        let resid = DVector::from_iterator(training.len(), training.iter().map(|o| o.value - hyper.mean_const));
        let weights = solve_factored(&factor, resid);
        Ok(Self {
            hyper,
            training,
            options,
            jitter,
            factor,
            weights,
        })
    }

    pub fn hyper(&self) -> &JointHyperParams {
        &self.hyper
    }

    pub fn training(&self) -> &TrainingSet {
        &self.training
    }

    pub fn options(&self) -> FitOptions {
        self.options
    }

    /// Diagonal jitter that was added for the factorization.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn dim(&self) -> usize {
        self.hyper.dim()
    }

    pub fn n_observations(&self) -> usize {
        self.training.len()
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        self.hyper.base.check_dim(x)
    }

    /// `K(x, X)` for the current-task point `(0, x)`.
    pub fn cross_cov(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.training.len(),
            self.training
                .iter()
                .map(|o| self.hyper.cov_unchecked(0, x, o.task, &o.point)),
        )
    }

    /// `K(X, P)` for current-task points `P`, one column per point.
    pub(crate) fn cross_cov_matrix(&self, points: &[DesignPoint]) -> DMatrix<f64> {
        let n = self.training.len();
        let mut out = DMatrix::zeros(n, points.len());
        for (j, p) in points.iter().enumerate() {
            for (i, o) in self.training.iter().enumerate() {
                out[(i, j)] = self.hyper.cov_unchecked(0, p, o.task, &o.point);
            }
        }
        out
    }

    /// `L⁻¹ K(X, P)`: the posterior covariance of `P` is `Σ₀(P,P) − VᵀV`.
    pub(crate) fn whitened(&self, points: &[DesignPoint]) -> DMatrix<f64> {
        let mut v = self.cross_cov_matrix(points);
        if self.training.is_empty() {
            return v;
        }
        self.factor.solve_lower_triangular_mut(&mut v);
        v
    }

    pub(crate) fn mean_from_cross(&self, kx: &DVector<f64>) -> f64 {
        self.hyper.mean_const + kx.dot(&self.weights)
    }

    /// Posterior means at many current-task points.
    pub fn means(&self, points: &[DesignPoint]) -> Result<Vec<f64>> {
        points.iter().map(|p| self.check_point(p)).collect::<Result<Vec<()>>>()?;
        Ok(points
            .iter()
            .map(|p| self.mean_from_cross(&self.cross_cov(p)))
            .collect())
    }

    pub fn mean(&self, x: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        Ok(self.mean_from_cross(&self.cross_cov(x)))
    }

    /// Predictive mean and variance of `f(0, x)`.
    pub fn mean_var(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_point(x)?;
        let kx = self.cross_cov(x);
        let mean = self.mean_from_cross(&kx);
        let prior = self.hyper.base.eval_unchecked(x, x);
        if self.training.is_empty() {
            return Ok((mean, prior));
        }
        let v = self.factor.solve_lower_triangular(&kx).expect("factor is nonsingular");
        Ok((mean, (prior - v.norm_squared()).max(0.0)))
    }

    /// Posterior covariance of `f(0, x)` and `f(0, x2)`.
    pub fn cov(&self, x: &[f64], x2: &[f64]) -> Result<f64> {
        self.check_point(x)?;
        self.check_point(x2)?;
        let prior = self.hyper.base.eval_unchecked(x, x2);
        if self.training.is_empty() {
            return Ok(prior);
        }
        let v1 = self.factor.solve_lower_triangular(&self.cross_cov(x)).expect("factor is nonsingular");
        if x == x2 {
            return Ok((prior - v1.norm_squared()).max(0.0));
        }
        let v2 = self.factor.solve_lower_triangular(&self.cross_cov(x2)).expect("factor is nonsingular");
        Ok(prior - v1.dot(&v2))
    }

    /// The posterior after adding `obs`; a full refit with the same hyperparameters.
    pub fn condition_on(&self, obs: Observation) -> Result<Self> {
        let mut training = self.training.clone();
        training.push(obs);
        Self::fit_with(self.hyper.clone(), training, self.options)
    }

    /// `ln det(K + D + jitter·I)`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.factor.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// `(Y − μ₀)ᵀ [K + D]⁻¹ (Y − μ₀)`.
    pub fn quadratic_form(&self) -> f64 {
        self.training
            .iter()
            .zip(self.weights.iter())
            .map(|(o, w)| (o.value - self.hyper.mean_const) * w)
            .sum()
    }

    /// `[K + D]⁻¹` formed from the factor.
    pub fn inverse(&self) -> DMatrix<f64> {
        let n = self.training.len();
        solve_factored_matrix(&self.factor, DMatrix::identity(n, n))
    }
}

pub(crate) fn solve_factored(factor: &DMatrix<f64>, mut rhs: DVector<f64>) -> DVector<f64> {
    if factor.nrows() == 0 {
        return rhs;
    }
    factor.solve_lower_triangular_mut(&mut rhs);
    factor.tr_solve_lower_triangular_mut(&mut rhs);
    rhs
}

fn solve_factored_matrix(factor: &DMatrix<f64>, mut rhs: DMatrix<f64>) -> DMatrix<f64> {
    if factor.nrows() == 0 {
        return rhs;
    }
    factor.solve_lower_triangular_mut(&mut rhs);
    factor.tr_solve_lower_triangular_mut(&mut rhs);
    rhs
}

pub fn fit(hyper: JointHyperParams, training: TrainingSet) -> Result<Posterior> {
    Posterior::fit(hyper, training)
}

pub fn posterior_mean_var(state: &Posterior, x: &[f64]) -> Result<(f64, f64)> {
    state.mean_var(x)
}

pub fn posterior_cov(state: &Posterior, x: &[f64], x2: &[f64]) -> Result<f64> {
    state.cov(x, x2)
}

pub fn condition_on(state: &Posterior, obs: Observation) -> Result<Posterior> {
    state.condition_on(obs)
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::kernels::{KernelFamily, KernelParams};

    fn hyper(m: usize, delta_amp: f64) -> JointHyperParams {
        let base = KernelParams::new(KernelFamily::Matern52, 1.0, vec![0.8, 1.2]).unwrap();
        let delta = KernelParams::new(KernelFamily::Matern52, delta_amp, vec![1.0, 1.0]).unwrap();
        JointHyperParams::new(0.3, base, vec![delta; m]).unwrap()
    }

    fn random_training(rng: &mut impl Rng, n: usize, m: usize) -> TrainingSet {
        (0..n)
            .map(|_| {
                Observation::new(
                    rng.random_range(0..=m),
                    vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)],
                    rng.random_range(-2.0..2.0),
                    rng.random_range(0.01..0.3),
                )
                .unwrap()
            })
            .collect()
    }

    #[test]
    fn single_observation_weights() {
        let hp = JointHyperParams::single_task(0.0, KernelParams::isotropic(KernelFamily::Matern52, 2.0, 1.0, 2).unwrap());
        let obs = Observation::new(0, vec![0.1, 0.2], 3.0, 0.0).unwrap();
        let post = Posterior::fit_with(hp, vec![obs].into(), FitOptions { jitter_rel: 0.0, max_retries: 3 }).unwrap();
        assert!((post.weights()[0] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn factor_reconstructs_gram_plus_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hp = hyper(2, 0.5);
        let training = random_training(&mut rng, 25, 2);
        let post = Posterior::fit(hp.clone(), training.clone()).unwrap();
        let mut kd = hp.gram(&training.task_points()).unwrap();
        for (i, o) in training.iter().enumerate() {
            kd[(i, i)] += o.noise_var + post.jitter();
        }
        let l = post.factor();
        let rebuilt = l * l.transpose();
        let rel = (&rebuilt - &kd).norm() / kd.norm();
        assert!(rel < 1e-8, "relative reconstruction error {rel}");
        let resid = DVector::from_iterator(training.len(), training.iter().map(|o| o.value - hp.mean_const));
        assert!((&kd * post.weights() - resid).amax() < 1e-8);
    }

    #[test]
    fn empty_training_recovers_prior() {
        let hp = hyper(1, 0.5);
        let post = Posterior::fit(hp.clone(), TrainingSet::default()).unwrap();
        let x = [0.3, -0.4];
        let y = [1.0, 0.2];
        assert_eq!(post.mean_var(&x).unwrap(), (hp.mean_const, hp.base.amplitude()));
        assert_eq!(post.cov(&x, &y).unwrap(), hp.base.eval(&x, &y).unwrap());
    }

    #[test]
    fn noiseless_interpolation() {
        let hp = hyper(0, 1.0);
        let pts = [vec![0.0, 0.0], vec![1.0, -0.5], vec![-1.2, 1.1]];
        let training: TrainingSet = pts
            .iter()
            .zip([0.7, -1.3, 2.1])
            .map(|(p, y)| Observation::new(0, p.clone(), y, 0.0).unwrap())
            .collect();
        let post = Posterior::fit(hp.clone(), training).unwrap();
        for (p, y) in pts.iter().zip([0.7, -1.3, 2.1]) {
            let (m, v) = post.mean_var(p).unwrap();
            assert!((m - y).abs() < 1e-6);
            assert!(v <= 1e-6 * hp.base.amplitude());
        }
    }

    #[test]
    fn diagonal_consistency_and_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let post = Posterior::fit(hyper(2, 0.4), random_training(&mut rng, 15, 2)).unwrap();
        let (x, y) = ([0.1, 0.9], [-0.7, 0.2]);
        let (_, var) = post.mean_var(&x).unwrap();
        assert!((post.cov(&x, &x).unwrap() - var).abs() < 1e-14);
        assert!((post.cov(&x, &y).unwrap() - post.cov(&y, &x).unwrap()).abs() < 1e-14);
        assert!(post.mean_var(&[0.0]).is_err());
    }

    #[test]
    fn condition_on_matches_refit_and_leaves_original() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let training = random_training(&mut rng, 12, 1);
        let post = Posterior::fit(hyper(1, 0.4), training.clone()).unwrap();
        let before = post.mean_var(&[0.5, 0.5]).unwrap();
        let obs = Observation::new(0, vec![0.4, 0.6], 1.0, 0.05).unwrap();
        let cond = post.condition_on(obs.clone()).unwrap();
        let mut extended = training;
        extended.push(obs);
        let refit = Posterior::fit(hyper(1, 0.4), extended).unwrap();
        let (a, b) = (cond.mean_var(&[0.1, -0.3]).unwrap(), refit.mean_var(&[0.1, -0.3]).unwrap());
        assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8);
        assert_eq!(post.mean_var(&[0.5, 0.5]).unwrap(), before);
        assert_eq!(post.n_observations(), 12);
    }

    #[test]
    fn conditioning_never_increases_variance_at_that_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut post = Posterior::fit(hyper(2, 0.4), random_training(&mut rng, 8, 2)).unwrap();
        for _ in 0..20 {
            let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
            let (_, before) = post.mean_var(&x).unwrap();
            post = post.condition_on(Observation::new(0, x.clone(), rng.random_range(-1.0..1.0), 0.1).unwrap()).unwrap();
            let (_, after) = post.mean_var(&x).unwrap();
            assert!(after <= before + 1e-10);
        }
    }

    #[test]
    fn huge_noise_observation_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let post = Posterior::fit(hyper(1, 0.4), random_training(&mut rng, 10, 1)).unwrap();
        let cond = post.condition_on(Observation::new(0, vec![0.0, 0.0], 50.0, 1e12).unwrap()).unwrap();
        for x in [[0.0, 0.0], [1.0, 1.0], [-1.5, 0.5]] {
            let (a, b) = (post.mean_var(&x).unwrap(), cond.mean_var(&x).unwrap());
            assert!((a.0 - b.0).abs() < 1e-4 && (a.1 - b.1).abs() < 1e-4);
        }
    }

    #[test]
    fn previous_task_data_informs_current_task() {
        let x = vec![0.2, -0.1];
        let base = KernelParams::new(KernelFamily::Matern52, 1.0, vec![1.0, 1.0]).unwrap();
        let change = |delta_amp: f64| {
            let delta = KernelParams::new(KernelFamily::Matern52, delta_amp, vec![1.0, 1.0]).unwrap();
            let hp = JointHyperParams::new(0.0, base.clone(), vec![delta]).unwrap();
            let prior = Posterior::fit(hp.clone(), TrainingSet::default()).unwrap();
            let post = prior.condition_on(Observation::new(1, x.clone(), 2.0, 0.01).unwrap()).unwrap();
            post.mean(&x).unwrap() - prior.mean(&x).unwrap()
        };
        let at_one = change(1.0);
        assert!(at_one.abs() > 0.1);
        assert!(change(1e6).abs() < 1e-2 * at_one.abs());
    }

    #[test]
    fn escalation_reports_jitter_levels() {
        let base = KernelParams::isotropic(KernelFamily::SquaredExponential, 1.0, 1.0, 1).unwrap();
        let hp = JointHyperParams::single_task(0.0, base);
        // Identical noiseless points: singular without jitter.
        let training: TrainingSet = (0..3).map(|_| Observation::new(0, vec![0.5], 1.0, 0.0).unwrap()).collect();
        let err = Posterior::fit_with(hp.clone(), training.clone(), FitOptions { jitter_rel: 0.0, max_retries: 3 }).unwrap_err();
        match err {
            Error::IllConditioned { jitters } => assert_eq!(jitters.len(), 4),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Posterior::fit(hp, training).is_ok());
    }

    #[test]
    fn rejects_unknown_task() {
        let obs = Observation::new(3, vec![0.0, 0.0], 1.0, 0.1).unwrap();
        assert!(Posterior::fit(hyper(1, 0.5), vec![obs].into()).is_err());
        assert!(Observation::new(0, vec![0.0], 1.0, -0.1).is_err());
    }
}
