//! MAP estimation of the joint-model hyperparameters.
//!
//! The parameters are optimized as one vector: the constant prior mean
//! followed, for the base kernel and then every delta kernel, by the log
//! amplitude and the log length scales.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::gp::{Posterior, TrainingSet};
use crate::kernels::{JointHyperParams, KernelFamily, KernelParams};
use crate::rng;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Shape of the parameter vector: one kernel family, `dim` inputs and `n_previous` delta kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub family: KernelFamily,
    pub dim: usize,
    pub n_previous: usize,
}

impl ParamLayout {
    pub fn of(hp: &JointHyperParams) -> Self {
        Self {
            family: hp.base.family(),
            dim: hp.dim(),
            n_previous: hp.n_previous(),
        }
    }

    /// Number of log-transformed positive parameters.
    pub fn n_positive(&self) -> usize {
        (self.n_previous + 1) * (self.dim + 1)
    }

    /// Length of the full vector, mean constant included.
    pub fn len(&self) -> usize {
        1 + self.n_positive()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn to_vector(&self, hp: &JointHyperParams) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.len());
        v.push(hp.mean_const);
        for k in std::iter::once(&hp.base).chain(&hp.deltas) {
            v.push(k.amplitude().ln());
            v.extend(k.length_scales().iter().map(|l| l.ln()));
        }
        v
    }

    pub fn from_vector(&self, v: &[f64]) -> Result<JointHyperParams> {
        if v.len() != self.len() {
            return Err(Error::invalid(format!("expected {} parameters, got {}", self.len(), v.len())));
        }
        let block = self.dim + 1;
        let kernel = |k: usize| {
            let s = &v[1 + k * block..1 + (k + 1) * block];
            KernelParams::new(self.family, s[0].exp(), s[1..].iter().map(|l| l.exp()).collect())
        };
        let base = kernel(0)?;
        let deltas = (1..=self.n_previous).map(kernel).collect::<Result<Vec<_>>>()?;
        JointHyperParams::new(v[0], base, deltas)
    }

    /// Human-readable names in vector order.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["mean_const".to_string()];
        for k in 0..=self.n_previous {
            let prefix = if k == 0 { "base".to_string() } else { format!("delta.{k}") };
            names.push(format!("{prefix}.log_amplitude"));
            names.extend((0..self.dim).map(|i| format!("{prefix}.log_length_scale.{i}")));
        }
        names
    }
}

/// Prior over the log of every positive parameter. The mean constant is always flat.
#[derive(Clone, Debug, PartialEq)]
pub enum HyperPrior {
    Flat,
    LogNormal { means: Vec<f64>, stddevs: Vec<f64> },
}

impl HyperPrior {
    pub fn log_normal(means: Vec<f64>, stddevs: Vec<f64>) -> Result<Self> {
        if means.len() != stddevs.len() {
            return Err(Error::invalid("prior means and stddevs differ in length"));
        }
        if stddevs.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::invalid("prior stddevs must be positive"));
        }
        Ok(HyperPrior::LogNormal { means, stddevs })
    }

    /// Normal prior centred on `hp` with the same stddev for every log-parameter.
    pub fn centred_on(hp: &JointHyperParams, stddev: f64) -> Result<Self> {
        let v = ParamLayout::of(hp).to_vector(hp);
        Self::log_normal(v[1..].to_vec(), vec![stddev; v.len() - 1])
    }

    /// Empirical prior from earlier fits: per-parameter mean and stddev of the
    /// log-parameters. Fewer than two fits give a flat prior.
    pub fn from_fits(fits: &[JointHyperParams]) -> Result<Self> {
        if fits.len() < 2 {
            return Ok(HyperPrior::Flat);
        }
        let layout = ParamLayout::of(&fits[0]);
        if fits.iter().any(|f| ParamLayout::of(f) != layout) {
            return Err(Error::invalid("previous fits have different parameter layouts"));
        }
        let vs: Vec<Vec<f64>> = fits.iter().map(|f| layout.to_vector(f)[1..].to_vec()).collect();
        let n = vs.len() as f64;
        let p = layout.n_positive();
        let means: Vec<f64> = (0..p).map(|i| vs.iter().map(|v| v[i]).sum::<f64>() / n).collect();
        let stddevs = (0..p)
            .map(|i| {
                let var = vs.iter().map(|v| (v[i] - means[i]).powi(2)).sum::<f64>() / (n - 1.0);
                // identical fits would give a point mass
                var.sqrt().max(0.05)
            })
            .collect();
        Self::log_normal(means, stddevs)
    }

    fn check(&self, layout: &ParamLayout) -> Result<()> {
        match self {
            HyperPrior::Flat => Ok(()),
            HyperPrior::LogNormal { means, .. } if means.len() == layout.n_positive() => Ok(()),
            HyperPrior::LogNormal { means, .. } => Err(Error::invalid(format!(
                "prior covers {} parameters but the model has {}",
                means.len(),
                layout.n_positive()
            ))),
        }
    }

    /// Log density over the positive log-parameters `logs`, with its gradient added into `grad`.
    fn log_density(&self, logs: &[f64], grad: Option<&mut [f64]>) -> f64 {
        match self {
            HyperPrior::Flat => 0.0,
            HyperPrior::LogNormal { means, stddevs } => {
                let mut total = 0.0;
                let mut grad = grad;
                for (i, ((v, m), s)) in logs.iter().zip(means).zip(stddevs).enumerate() {
                    let z = (v - m) / s;
                    total += -0.5 * z * z - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
                    if let Some(g) = grad.as_deref_mut() {
                        g[i] += -z / s;
                    }
                }
                total
            }
        }
    }
}

/// `ln N(Y; μ₀, K + D)`.
pub fn log_marginal(hp: &JointHyperParams, training: &TrainingSet) -> Result<f64> {
    if training.is_empty() {
        return Err(Error::invalid("log marginal likelihood needs at least one observation"));
    }
    let post = Posterior::fit(hp.clone(), training.clone())?;
    Ok(log_marginal_of(&post))
}

fn log_marginal_of(post: &Posterior) -> f64 {
    let n = post.n_observations() as f64;
    -0.5 * post.quadratic_form() - 0.5 * post.log_det() - 0.5 * n * LN_2PI
}

pub fn log_posterior(hp: &JointHyperParams, prior: &HyperPrior, training: &TrainingSet) -> Result<f64> {
    let layout = ParamLayout::of(hp);
    prior.check(&layout)?;
    let v = layout.to_vector(hp);
    Ok(log_marginal(hp, training)? + prior.log_density(&v[1..], None))
}

/// Log posterior and its gradient over the parameter vector of [`ParamLayout`].
pub fn log_posterior_with_grad(hp: &JointHyperParams, prior: &HyperPrior, training: &TrainingSet) -> Result<(f64, Vec<f64>)> {
    if training.is_empty() {
        return Err(Error::invalid("log marginal likelihood needs at least one observation"));
    }
    let layout = ParamLayout::of(hp);
    prior.check(&layout)?;
    let post = Posterior::fit(hp.clone(), training.clone())?;
    let mut grad = vec![0.0; layout.len()];
    let w = post.weights();
    let inv = post.inverse();
    let obs = training.observations();
    let n = obs.len();
    let block = layout.dim + 1;
    let mut kg = vec![0.0; block];

    grad[0] = w.iter().sum();
    // ½ tr((wwᵀ − (K+D)⁻¹) ∂K/∂θ), visiting each unordered pair once.
    for i in 0..n {
        for j in 0..=i {
            let scale = if i == j { 0.5 } else { 1.0 };
            let a = scale * (w[i] * w[j] - inv[(i, j)]);
            if a == 0.0 {
                continue;
            }
            hp.base.eval_log_grad(&obs[i].point, &obs[j].point, &mut kg);
            for (g, d) in grad[1..1 + block].iter_mut().zip(&kg) {
                *g += a * d;
            }
            let t = obs[i].task;
            if t >= 1 && t == obs[j].task {
                hp.deltas[t - 1].eval_log_grad(&obs[i].point, &obs[j].point, &mut kg);
                let off = 1 + t * block;
                for (g, d) in grad[off..off + block].iter_mut().zip(&kg) {
                    *g += a * d;
                }
            }
        }
    }
    // The jitter is proportional to the base amplitude.
    let jitter = post.jitter();
    if jitter > 0.0 {
        grad[1] += 0.5 * jitter * (0..n).map(|i| w[i] * w[i] - inv[(i, i)]).sum::<f64>();
    }

    let v = layout.to_vector(hp);
    let lp = prior.log_density(&v[1..], Some(&mut grad[1..]));
    Ok((log_marginal_of(&post) + lp, grad))
}

pub fn grad_log_posterior(hp: &JointHyperParams, prior: &HyperPrior, training: &TrainingSet) -> Result<Vec<f64>> {
    log_posterior_with_grad(hp, prior, training).map(|(_, g)| g)
}

/// Settings for [`map_estimate`].
#[derive(Clone, Debug, PartialEq)]
pub struct MapSettings {
    pub family: KernelFamily,
    pub n_restarts: usize,
    pub seed: u64,
    pub max_iter: usize,
    pub grad_tol: f64,
}

impl Default for MapSettings {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            n_restarts: 10,
            seed: 0,
            max_iter: 200,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restart {
    pub start: JointHyperParams,
    pub start_objective: Option<f64>,
    /// `None` when the restart failed.
    pub objective: Option<f64>,
    pub params: Option<JointHyperParams>,
    pub iterations: usize,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FitReport {
    pub best_params: JointHyperParams,
    pub best_objective: f64,
    pub restarts: Vec<Restart>,
}

/// Result of a quasi-Newton ascent.
#[derive(Clone, Debug)]
pub struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// Objective after every accepted step, starting with the initial value.
    pub path: Vec<f64>,
}

/// BFGS ascent with Armijo backtracking. `objective` returns `None` where it
/// cannot be evaluated; such trial points are rejected by the line search.
pub fn bfgs_ascent<F>(mut objective: F, x0: Vec<f64>, max_iter: usize, grad_tol: f64) -> Option<Ascent>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    const MAX_STEP: f64 = 3.0;
    let n = x0.len();
    let (mut f, mut g) = objective(&x0)?;
    let mut x = x0;
    let mut h = identity(n);
    let mut path = vec![f];
    let mut iterations = 0;
    while iterations < max_iter && norm(&g) >= grad_tol {
        iterations += 1;
        let mut p = mat_vec(&h, &g);
        if dot(&p, &g) <= 0.0 {
            h = identity(n);
            p = g.clone();
        }
        let big = p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big > MAX_STEP {
            p.iter_mut().for_each(|v| *v *= MAX_STEP / big);
        }
        let slope = dot(&p, &g);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let xn: Vec<f64> = x.iter().zip(&p).map(|(a, b)| a + t * b).collect();
            if let Some((fnew, gnew)) = objective(&xn) {
                if fnew.is_finite() && fnew >= f + 1e-4 * t * slope {
                    accepted = Some((xn, fnew, gnew));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fnew, gnew)) = accepted else { break };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        // gradient change of the minimized function −f
        let y: Vec<f64> = g.iter().zip(&gnew).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let gain = fnew - f;
        x = xn;
        f = fnew;
        g = gnew;
        path.push(f);
        if gain <= 1e-14 * (1.0 + f.abs()) && s.iter().all(|v| v.abs() < 1e-10) {
            break;
        }
    }
    Some(Ascent {
        x,
        value: f,
        grad: g,
        iterations,
        path,
    })
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

/// `H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ`.
fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let rho = 1.0 / sy;
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let n = s.len();
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

fn start_points(layout: &ParamLayout, prior: &HyperPrior, training: &TrainingSet, settings: &MapSettings) -> Vec<Vec<f64>> {
    let ys: Vec<f64> = training.iter().map(|o| o.value).collect();
    let n = ys.len() as f64;
    let y_mean = ys.iter().sum::<f64>() / n;
    let y_var = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n).max(1e-12);
    let extents: Vec<f64> = (0..layout.dim)
        .map(|i| {
            let (lo, hi) = training
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), o| (lo.min(o.point[i]), hi.max(o.point[i])));
            if hi > lo {
                hi - lo
            } else {
                1.0
            }
        })
        .collect();

    let mut rng = rng::stream(settings.seed, rng::HYPER_RESTARTS, 0);
    (0..settings.n_restarts)
        .map(|_| {
            let mut v = Vec::with_capacity(layout.len());
            v.push(y_mean);
            match prior {
                HyperPrior::LogNormal { means, stddevs } => {
                    for (m, s) in means.iter().zip(stddevs) {
                        v.push(Normal::new(*m, *s).expect("positive stddev").sample(&mut rng));
                    }
                }
                HyperPrior::Flat => {
                    for k in 0..=layout.n_previous {
                        let (lo, hi) = if k == 0 { (0.1, 10.0) } else { (1e-4, 1.0) };
                        v.push(rng.random_range((lo * y_var).ln()..(hi * y_var).ln()));
                        for e in &extents {
                            v.push(rng.random_range((0.05 * e).ln()..(2.0 * e).ln()));
                        }
                    }
                }
            }
            v
        })
        .collect()
}

/// Multi-start MAP estimate; `M` is the largest task index in `training`.
pub fn map_estimate(prior: &HyperPrior, training: &TrainingSet, settings: &MapSettings) -> Result<FitReport> {
    if training.is_empty() {
        return Err(Error::invalid("MAP estimation needs at least one observation"));
    }
    if settings.n_restarts == 0 {
        return Err(Error::invalid("MAP estimation needs at least one restart"));
    }
    let dim = training.observations()[0].point.len();
    if dim == 0 || training.iter().any(|o| o.point.len() != dim) {
        return Err(Error::invalid("training points have inconsistent dimensions"));
    }
    let layout = ParamLayout {
        family: settings.family,
        dim,
        n_previous: training.iter().map(|o| o.task).max().unwrap_or(0),
    };
    prior.check(&layout)?;

    let eval = |v: &[f64]| -> Option<(f64, Vec<f64>)> {
        let hp = layout.from_vector(v).ok()?;
        log_posterior_with_grad(&hp, prior, training).ok()
    };

    let starts = start_points(&layout, prior, training, settings);
    let restarts: Vec<Restart> = starts
        .into_par_iter()
        .map(|x0| {
            let start = layout.from_vector(&x0).expect("start points are finite");
            let start_objective = eval(&x0).map(|(f, _)| f);
            match bfgs_ascent(eval, x0, settings.max_iter, settings.grad_tol) {
                Some(a) => Restart {
                    start,
                    start_objective,
                    objective: Some(a.value),
                    params: layout.from_vector(&a.x).ok(),
                    iterations: a.iterations,
                    grad_norm: norm(&a.grad),
                },
                None => Restart {
                    start,
                    start_objective,
                    objective: None,
                    params: None,
                    iterations: 0,
                    grad_norm: f64::NAN,
                },
            }
        })
        .collect();

    let best = restarts
        .iter()
        .filter_map(|r| Some((r.objective?, r.params.clone()?)))
        .fold(None::<(f64, JointHyperParams)>, |best, (f, p)| match best {
            Some((bf, _)) if bf >= f => best,
            _ => Some((f, p)),
        });
    let Some((best_objective, best_params)) = best else {
        return Err(Error::EstimationFailed(format!(
            "all {} restarts failed to factorize the model",
            restarts.len()
        )));
    };
    Ok(FitReport {
        best_params,
        best_objective,
        restarts,
    })
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::gp::Observation;

    fn unit_hp() -> JointHyperParams {
        JointHyperParams::single_task(0.0, KernelParams::isotropic(KernelFamily::Matern52, 1.0, 1.0, 1).unwrap())
    }

    fn single(y: f64) -> TrainingSet {
        vec![Observation::new(0, vec![0.3], y, 0.0).unwrap()].into()
    }

    #[test]
    fn univariate_log_densities() {
        let half_ln_2pi = 0.5 * LN_2PI;
        let at0 = log_marginal(&unit_hp(), &single(0.0)).unwrap();
        assert!((at0 + half_ln_2pi).abs() < 1e-7, "{at0}");
        assert!((at0 + 0.9189).abs() < 1e-4);
        let at2 = log_marginal(&unit_hp(), &single(2.0)).unwrap();
        assert!((at2 - (-2.0 - half_ln_2pi)).abs() < 1e-7, "{at2}");
    }

    #[test]
    fn zero_residuals_leave_only_the_determinant() {
        let base = KernelParams::new(KernelFamily::Matern52, 1.3, vec![0.6, 0.9]).unwrap();
        let hp = JointHyperParams::new(0.7, base.clone(), vec![base]).unwrap();
        let training: TrainingSet = [(0, [0.0, 0.1]), (1, [0.5, -0.2]), (0, [1.0, 1.0])]
            .into_iter()
            .map(|(t, p)| Observation::new(t, p.to_vec(), 0.7, 0.05).unwrap())
            .collect();
        let post = Posterior::fit(hp.clone(), training.clone()).unwrap();
        let expect = -0.5 * post.log_det() - 1.5 * LN_2PI;
        assert!((log_marginal(&hp, &training).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn flat_prior_adds_nothing() {
        let t = single(1.1);
        assert_eq!(log_posterior(&unit_hp(), &HyperPrior::Flat, &t).unwrap(), log_marginal(&unit_hp(), &t).unwrap());
    }

    #[test]
    fn normal_prior_at_its_mean() {
        let hp = unit_hp();
        let t = single(0.4);
        let stddevs = vec![0.5, 2.0];
        let prior = HyperPrior::log_normal(vec![0.0, 0.0], stddevs.clone()).unwrap();
        let expect = log_marginal(&hp, &t).unwrap()
            + stddevs.iter().map(|s| -(s * (2.0 * std::f64::consts::PI).sqrt()).ln()).sum::<f64>();
        assert!((log_posterior(&hp, &prior, &t).unwrap() - expect).abs() < 1e-12);
        // zero prior gradient at the prior mean
        let flat = grad_log_posterior(&hp, &HyperPrior::Flat, &t).unwrap();
        let with = grad_log_posterior(&hp, &prior, &t).unwrap();
        for (a, b) in flat.iter().zip(&with) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn layout_round_trip() {
        let base = KernelParams::new(KernelFamily::Matern52, 2.0, vec![0.5, 3.0]).unwrap();
        let delta = KernelParams::new(KernelFamily::Matern52, 0.1, vec![1.5, 0.25]).unwrap();
        let hp = JointHyperParams::new(-1.5, base, vec![delta]).unwrap();
        let layout = ParamLayout::of(&hp);
        assert_eq!(layout.len(), 7);
        assert_eq!(layout.names().len(), 7);
        let back = layout.from_vector(&layout.to_vector(&hp)).unwrap();
        assert_eq!(back.mean_const, hp.mean_const);
        for (a, b) in layout.to_vector(&back).iter().zip(layout.to_vector(&hp)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn ascent_finds_quadratic_maximum() {
        let target = [1.0, -2.0, 0.5];
        let obj = |x: &[f64]| {
            let f = -x.iter().zip(&target).enumerate().map(|(i, (a, b))| (i as f64 + 1.0) * (a - b).powi(2)).sum::<f64>();
            let g = x.iter().zip(&target).enumerate().map(|(i, (a, b))| -2.0 * (i as f64 + 1.0) * (a - b)).collect();
            Some((f, g))
        };
        let a = bfgs_ascent(obj, vec![0.0; 3], 200, 1e-10).unwrap();
        for (x, t) in a.x.iter().zip(&target) {
            assert!((x - t).abs() < 1e-8);
        }
        assert!(a.path.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn empirical_prior_needs_two_fits() {
        let hp = unit_hp();
        assert_eq!(HyperPrior::from_fits(std::slice::from_ref(&hp)).unwrap(), HyperPrior::Flat);
        let mut other = hp.clone();
        other.base = KernelParams::isotropic(KernelFamily::Matern52, 4.0, 2.0, 1).unwrap();
        match HyperPrior::from_fits(&[hp, other]).unwrap() {
            HyperPrior::LogNormal { means, stddevs } => {
                assert!((means[0] - 4f64.ln() / 2.0).abs() < 1e-12);
                assert!((stddevs[0] - 2f64.ln() * 2f64.sqrt()).abs() < 1e-12);
            }
            HyperPrior::Flat => panic!("expected a normal prior"),
        }
    }

    #[test]
    fn map_is_deterministic_and_improves_on_every_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let training: TrainingSet = (0..25)
            .map(|_| {
                let x: f64 = rng.random_range(-2.0..2.0);
                Observation::new(0, vec![x], (2.0 * x).sin(), 0.01).unwrap()
            })
            .collect();
        let settings = MapSettings {
            n_restarts: 4,
            seed: 3,
            ..MapSettings::default()
        };
        let a = map_estimate(&HyperPrior::Flat, &training, &settings).unwrap();
        let b = map_estimate(&HyperPrior::Flat, &training, &settings).unwrap();
        assert_eq!(a, b);
        for r in &a.restarts {
            if let Some(s) = r.start_objective {
                assert!(a.best_objective >= s);
                assert!(r.objective.unwrap() >= s);
            }
        }
        let max = a.restarts.iter().filter_map(|r| r.objective).fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(a.best_objective, max);
    }
}
