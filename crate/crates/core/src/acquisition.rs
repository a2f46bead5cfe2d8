//! Knowledge-gradient acquisition over a finite discretization, and the
//! expected-improvement criterion used by EGO.
//!
//! After one more sample at `x` with noise variance `λ`, the posterior mean on
//! the discretization moves as `μⁿ⁺¹(x') = μⁿ(x') + σ̃_{x'}(x) Z`, where
//! `σ̃_{x'}(x) = Σⁿ(x', x) / sqrt(Σⁿ(x, x) + λ)`. The knowledge gradient of `x`
//! is `E[max_i (a_i + b_i Z)] − max_i a_i` with `a = μⁿ` and `b = σ̃(x)`, which
//! is evaluated exactly from the upper envelope of the lines `a_i + b_i z`.

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::design::BoxDomain;
use crate::gp::Posterior;
use crate::kernels::{DesignPoint, JointHyperParams};
use crate::normal;
use crate::{Error, Result};

/// Slopes closer than this are treated as equal.
const SLOPE_MERGE_TOL: f64 = 1e-12;
/// Knowledge-gradient values below this are reported as zero.
const KG_FLOOR: f64 = 1e-14;

/// A finite set of distinct design points.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateSet {
    points: Vec<DesignPoint>,
}

impl CandidateSet {
    pub fn new(points: Vec<DesignPoint>) -> Result<Self> {
        let Some(first) = points.first() else {
            return Err(Error::invalid("candidate set is empty"));
        };
        let d = first.len();
        if points.iter().any(|p| p.len() != d) {
            return Err(Error::invalid("candidate points have inconsistent dimensions"));
        }
        // Lexicographic sort puts exact and near-exact duplicates next to each other.
        let mut order: Vec<usize> = (0..points.len()).collect();
        order.sort_by(|&i, &j| {
            points[i]
                .iter()
                .zip(&points[j])
                .map(|(a, b)| a.total_cmp(b))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for w in order.windows(2) {
            let (p, q) = (&points[w[0]], &points[w[1]]);
            if p.iter().zip(q).all(|(a, b)| (a - b).abs() <= 1e-12) {
                return Err(Error::invalid(format!("candidate points {} and {} coincide", w[0], w[1])));
            }
        }
        Ok(Self { points })
    }

    /// As [`CandidateSet::new`], also requiring every point to lie in `domain`.
    pub fn within(points: Vec<DesignPoint>, domain: &BoxDomain) -> Result<Self> {
        for p in &points {
            domain.check(p)?;
        }
        Self::new(points)
    }

    pub fn points(&self) -> &[DesignPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionResult {
    /// Index of the chosen point in the candidate set.
    pub index: usize,
    pub chosen: DesignPoint,
    pub score: f64,
    /// Scores aligned with the candidate set.
    pub all_scores: Vec<f64>,
}

impl AcquisitionResult {
    fn from_scores(candidates: &CandidateSet, all_scores: Vec<f64>) -> Self {
        let index = argmax_first(&all_scores);
        Self {
            index,
            chosen: candidates.points[index].clone(),
            score: all_scores[index],
            all_scores,
        }
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax_first(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `Σⁿ(x', x) / sqrt(Σⁿ(x, x) + λ)`.
pub fn sigma_tilde(state: &Posterior, xprime: &[f64], x: &[f64], noise_var: f64) -> Result<f64> {
    if !(noise_var >= 0.0) {
        return Err(Error::invalid(format!("noise variance must be >= 0, got {noise_var}")));
    }
    let denom = state.cov(x, x)? + noise_var;
    if denom <= 0.0 {
        return Err(Error::DegenerateMeasurement);
    }
    Ok(state.cov(xprime, x)? / denom.sqrt())
}

/// `E[max_i (a_i + b_i Z)]` for standard normal `Z`.
pub fn expected_max_affine(a: &[f64], b: &[f64]) -> Result<f64> {
    check_affine(a, b)?;
    let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(top + affine_max_gain(a, b, &mut Envelope::default()))
}

fn check_affine(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || a.len() != b.len() {
        return Err(Error::invalid(format!(
            "intercepts and slopes must be nonempty and of equal length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("intercepts and slopes must be finite"));
    }
    Ok(())
}

/// `E[max_i (a_i + b_i Z)] − max_i a_i`.
///
/// Lines are sorted by slope, dominated lines dropped while scanning the
/// breakpoints `c_k` of the upper envelope, and the result is
/// `Σ_k (b_{k+1} − b_k) f(−|c_k|)` with `f(z) = z Φ(z) + φ(z)`.
pub(crate) fn affine_max_gain(a: &[f64], b: &[f64], scratch: &mut Envelope) -> f64 {
    let Envelope { lines, left } = scratch;
    lines.clear();
    left.clear();
    lines.extend(b.iter().copied().zip(a.iter().copied()));
    lines.sort_unstable_by(|p, q| p.0.total_cmp(&q.0).then(p.1.total_cmp(&q.1)));

    // The surviving envelope is compacted into the front of `lines`.
    let mut len = 0usize;
    'lines: for k in 0..lines.len() {
        let (bk, ak) = lines[k];
        let mut c = f64::NEG_INFINITY;
        while len > 0 {
            let (bt, at) = lines[len - 1];
            if bk - bt < SLOPE_MERGE_TOL {
                // equal slopes: keep the larger intercept
                if ak <= at {
                    continue 'lines;
                }
                len -= 1;
                left.pop();
                continue;
            }
            c = (at - ak) / (bk - bt);
            if c <= left[len - 1] {
                len -= 1;
                left.pop();
                c = f64::NEG_INFINITY;
                continue;
            }
            break;
        }
        lines[len] = (bk, ak);
        left.push(c);
        len += 1;
    }

    let mut gain = 0.0;
    for k in 1..len {
        gain += (lines[k].0 - lines[k - 1].0) * normal::expected_positive_part(-left[k].abs());
    }
    gain
}

/// Reusable buffers for [`affine_max_gain`].
#[derive(Debug, Default)]
pub(crate) struct Envelope {
    lines: Vec<(f64, f64)>,
    left: Vec<f64>,
}

/// Knowledge gradient of measuring `x` once more with noise variance `noise_var`.
pub fn kg_factor(state: &Posterior, x: &[f64], disc: &CandidateSet, noise_var: f64) -> Result<f64> {
    let single = CandidateSet::new(vec![x.to_vec()])?;
    let grid = KgGrid::new(state.hyper(), &single, disc)?;
    Ok(grid.scores(state, &[noise_var])?[0])
}

/// Prior covariances between a candidate pool and a discretization, computed
/// once per run and reused for every posterior of that run.
#[derive(Clone, Debug)]
pub struct KgGrid {
    candidates: CandidateSet,
    disc: CandidateSet,
    shared: bool,
    /// `Σ₀(disc, candidates)`.
    prior_cross: DMatrix<f64>,
    prior_var: Vec<f64>,
}

impl KgGrid {
    pub fn new(hyper: &JointHyperParams, candidates: &CandidateSet, disc: &CandidateSet) -> Result<Self> {
        if candidates.dim() != hyper.dim() || disc.dim() != hyper.dim() {
            return Err(Error::invalid("candidate dimension differs from the model dimension"));
        }
        let shared = candidates == disc;
        let (m, c) = (disc.len(), candidates.len());
        let mut prior_cross = DMatrix::zeros(m, c);
        if shared {
            for j in 0..c {
                for i in j..m {
                    let v = hyper.base.eval_unchecked(&disc.points[i], &candidates.points[j]);
                    prior_cross[(i, j)] = v;
                    prior_cross[(j, i)] = v;
                }
            }
        } else {
            for j in 0..c {
                for i in 0..m {
                    prior_cross[(i, j)] = hyper.base.eval_unchecked(&disc.points[i], &candidates.points[j]);
                }
            }
        }
        let prior_var = candidates.points.iter().map(|p| hyper.base.eval_unchecked(p, p)).collect();
        Ok(Self {
            candidates: candidates.clone(),
            disc: disc.clone(),
            shared,
            prior_cross,
            prior_var,
        })
    }

    pub fn candidates(&self) -> &CandidateSet {
        &self.candidates
    }

    pub fn disc(&self) -> &CandidateSet {
        &self.disc
    }

    /// Posterior means on the discretization.
    pub fn disc_means(&self, state: &Posterior) -> Vec<f64> {
        let k = state.cross_cov_matrix(&self.disc.points);
        (0..self.disc.len())
            .map(|i| state.hyper().mean_const + k.column(i).dot(state.weights()))
            .collect()
    }

    /// Knowledge gradient of every candidate; `noise[j]` is the noise variance of a sample at candidate `j`.
    pub fn scores(&self, state: &Posterior, noise: &[f64]) -> Result<Vec<f64>> {
        if noise.len() != self.candidates.len() {
            return Err(Error::invalid("one noise variance per candidate is required"));
        }
        let kd = state.cross_cov_matrix(&self.disc.points);
        let a: Vec<f64> = (0..self.disc.len())
            .map(|i| state.hyper().mean_const + kd.column(i).dot(state.weights()))
            .collect();

        let mut cov = self.prior_cross.clone();
        let mut post_var = self.prior_var.clone();
        if state.n_observations() > 0 {
            let mut vd = kd;
            state.factor().solve_lower_triangular_mut(&mut vd);
            let vc = if self.shared { vd.clone() } else { state.whitened(&self.candidates.points) };
            cov.gemm_tr(-1.0, &vd, &vc, 1.0);
            for (j, v) in post_var.iter_mut().enumerate() {
                *v -= vc.column(j).norm_squared();
            }
        }

        (0..self.candidates.len())
            .into_par_iter()
            .map_init(
                || (Vec::new(), Envelope::default()),
                |(b, scratch), j| {
                    if !(noise[j] >= 0.0) {
                        return Err(Error::invalid(format!("noise variance must be >= 0, got {}", noise[j])));
                    }
                    let denom = post_var[j].max(0.0) + noise[j];
                    if denom <= 0.0 {
                        return Err(Error::DegenerateMeasurement);
                    }
                    let scale = denom.sqrt().recip();
                    b.clear();
                    b.extend(cov.column(j).iter().map(|c| c * scale));
                    let g = affine_max_gain(&a, b, scratch);
                    Ok(if g < KG_FLOOR { 0.0 } else { g })
                },
            )
            .collect()
    }

    pub fn select(&self, state: &Posterior, noise: &[f64]) -> Result<AcquisitionResult> {
        let scores = self.scores(state, noise)?;
        Ok(AcquisitionResult::from_scores(&self.candidates, scores))
    }
}

/// Candidate with the largest knowledge gradient.
pub fn select_next_kg<F>(state: &Posterior, candidates: &CandidateSet, disc: &CandidateSet, noise_fn: F) -> Result<AcquisitionResult>
where
    F: Fn(&[f64]) -> f64,
{
    let grid = KgGrid::new(state.hyper(), candidates, disc)?;
    let noise: Vec<f64> = candidates.points.iter().map(|p| noise_fn(p)).collect();
    grid.select(state, &noise)
}

/// `E[max(Y − best, 0)]` for `Y ~ N(mean, sd²)`.
pub fn expected_improvement(mean: f64, sd: f64, best: f64) -> f64 {
    let diff = mean - best;
    if !(sd > 0.0) {
        return diff.max(0.0);
    }
    (sd * normal::expected_positive_part(diff / sd)).max(0.0)
}

/// Expected improvement of every candidate over `best`.
pub fn ei_scores(state: &Posterior, candidates: &CandidateSet, best: f64) -> Result<Vec<f64>> {
    if candidates.dim() != state.dim() {
        return Err(Error::invalid("candidate dimension differs from the model dimension"));
    }
    let k = state.cross_cov_matrix(&candidates.points);
    let mut v = k.clone();
    if state.n_observations() > 0 {
        state.factor().solve_lower_triangular_mut(&mut v);
    }
    let hyper = state.hyper();
    Ok(candidates
        .points
        .iter()
        .enumerate()
        .map(|(j, p)| {
            let mean = hyper.mean_const + k.column(j).dot(state.weights());
            let var = if state.n_observations() > 0 {
                (hyper.base.eval_unchecked(p, p) - v.column(j).norm_squared()).max(0.0)
            } else {
                hyper.base.eval_unchecked(p, p)
            };
            expected_improvement(mean, var.sqrt(), best)
        })
        .collect())
}

/// Candidate with the largest expected improvement over `best_observed`.
pub fn select_next_ei(state: &Posterior, candidates: &CandidateSet, best_observed: f64) -> Result<AcquisitionResult> {
    let scores = ei_scores(state, candidates, best_observed)?;
    Ok(AcquisitionResult::from_scores(candidates, scores))
}
