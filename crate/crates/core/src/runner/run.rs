//! One optimization run: warm-started KG, cold KG, or EGO.

use std::fmt;
use std::str::FromStr;

use crate::acquisition::{argmax_first, select_next_ei, AcquisitionResult, CandidateSet, KgGrid};
use crate::design::latin_hypercube;
use crate::gp::{Observation, Posterior, TrainingSet};
use crate::kernels::{DesignPoint, JointHyperParams};
use crate::rng;
use crate::runner::history::HistoryFile;
use crate::runner::instance::Instance;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Wskg,
    Kg,
    Ego,
}

impl Algorithm {
    pub const ALL: [Algorithm; 3] = [Algorithm::Wskg, Algorithm::Kg, Algorithm::Ego];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Wskg => "WSKG",
            Algorithm::Kg => "KG",
            Algorithm::Ego => "EGO",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "WSKG" => Ok(Algorithm::Wskg),
            "KG" => Ok(Algorithm::Kg),
            "EGO" | "EI" => Ok(Algorithm::Ego),
            other => Err(Error::invalid(format!("unknown algorithm '{other}' (expected WSKG, KG or EGO)"))),
        }
    }
}

/// Everything a run needs, already loaded.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub instance: Instance,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub n_initial: usize,
    pub disc_size: usize,
    pub hyper: JointHyperParams,
    /// Previous tasks; must be empty for the baselines.
    pub history: HistoryFile,
    /// Keep every candidate's acquisition score in the trace.
    pub keep_scores: bool,
    /// Seeds the discretization independently of the run seed.
    pub disc_seed: Option<u64>,
}

impl RunSpec {
    pub fn new(instance: Instance, algorithm: Algorithm, hyper: JointHyperParams) -> Self {
        Self {
            budget: instance.default_budget(),
            n_initial: instance.default_n_initial(),
            disc_size: instance.default_disc_size(),
            instance,
            algorithm,
            hyper,
            history: HistoryFile::empty(),
            keep_scores: false,
            disc_seed: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.instance.dim();
        if self.hyper.dim() != d {
            return Err(Error::invalid(format!("hyperparameters have dimension {}, instance {} has {d}", self.hyper.dim(), self.instance)));
        }
        if self.n_initial == 0 {
            return Err(Error::invalid("at least one initial design point is required"));
        }
        if self.disc_size == 0 {
            return Err(Error::invalid("discretization size must be positive"));
        }
        match self.algorithm {
            Algorithm::Wskg => {
                if !self.history.is_empty() && self.history.dim() != d {
                    return Err(Error::invalid(format!("history has dimension {}, instance {} has {d}", self.history.dim(), self.instance)));
                }
                if self.history.max_task() > self.hyper.n_previous() {
                    return Err(Error::invalid(format!(
                        "history has {} previous tasks but the hyperparameters describe {}",
                        self.history.max_task(),
                        self.hyper.n_previous()
                    )));
                }
            }
            Algorithm::Kg | Algorithm::Ego => {
                if !self.history.is_empty() {
                    return Err(Error::invalid(format!("{} does not use a history", self.algorithm)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub iteration: usize,
    pub chosen: DesignPoint,
    pub observed: Observation,
    /// Acquisition value of the chosen point.
    pub score: f64,
    pub all_scores: Option<Vec<f64>>,
    /// Largest posterior mean on the discretization after the update.
    pub recommendation: DesignPoint,
    pub recommendation_mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub initial: Vec<Observation>,
    pub trace: Vec<TraceStep>,
    pub recommendation: DesignPoint,
    pub recommendation_mean: f64,
}

impl RunResult {
    /// All task-0 observations in evaluation order.
    pub fn observations(&self) -> Vec<Observation> {
        self.initial.iter().cloned().chain(self.trace.iter().map(|s| s.observed.clone())).collect()
    }
}

/// The discretization of a run, also used as the candidate pool.
pub fn discretization(spec: &RunSpec, seed: u64) -> Result<CandidateSet> {
    let mut rng = rng::stream(spec.disc_seed.unwrap_or(seed), rng::DISCRETIZATION, 0);
    CandidateSet::within(latin_hypercube(&spec.instance.domain(), spec.disc_size, &mut rng), &spec.instance.domain())
}

/// The shared initial design and its observations for `seed`.
pub fn initial_observations(instance: &Instance, n_initial: usize, seed: u64, noise: &mut rng::StreamRng) -> Result<Vec<Observation>> {
    let mut rng = rng::stream(seed, rng::INITIAL_DESIGN, 0);
    latin_hypercube(&instance.domain(), n_initial, &mut rng)
        .iter()
        .enumerate()
        .map(|(i, x)| instance.evaluate(x, rng::stream_seed(seed, rng::SIMULATOR, i as u64), noise))
        .collect()
}

fn recommend(disc: &CandidateSet, means: &[f64]) -> (DesignPoint, f64) {
    let i = argmax_first(means);
    (disc.points()[i].clone(), means[i])
}

/// Runs `spec` with run seed `seed`. `spec.budget` may be 0, in which case
/// only the recommendation from history and initial data is produced.
pub fn run_replication(spec: &RunSpec, seed: u64) -> Result<RunResult> {
    spec.validate()?;
    let hyper = match spec.algorithm {
        Algorithm::Wskg => spec.hyper.clone(),
        Algorithm::Kg | Algorithm::Ego => spec.hyper.without_deltas(),
    };
    let disc = discretization(spec, seed)?;
    let mut noise = rng::stream(seed, rng::NOISE, 0);
    let initial = initial_observations(&spec.instance, spec.n_initial, seed, &mut noise)?;

    let mut training: TrainingSet = spec.history.training();
    for o in &initial {
        training.push(o.clone());
    }
    let mut state = Posterior::fit(hyper.clone(), training)?;
    let grid = match spec.algorithm {
        Algorithm::Ego => None,
        _ => Some(KgGrid::new(&hyper, &disc, &disc)?),
    };
    let disc_means = |state: &Posterior| -> Result<Vec<f64>> {
        match &grid {
            Some(g) => Ok(g.disc_means(state)),
            None => state.means(disc.points()),
        }
    };

    let mut current = initial.clone();
    let mut trace = Vec::with_capacity(spec.budget);
    for iteration in 1..=spec.budget {
        let pick: AcquisitionResult = match &grid {
            Some(grid) => {
                let noise_var = current.iter().map(|o| o.noise_var).sum::<f64>() / current.len() as f64;
                grid.select(&state, &vec![noise_var; disc.len()])?
            }
            None => {
                let sampled: Vec<DesignPoint> = current.iter().map(|o| o.point.clone()).collect();
                let best = state.means(&sampled)?.into_iter().fold(f64::NEG_INFINITY, f64::max);
                select_next_ei(&state, &disc, best)?
            }
        };
        let eval_index = (spec.n_initial + iteration - 1) as u64;
        let observed = spec
            .instance
            .evaluate(&pick.chosen, rng::stream_seed(seed, rng::SIMULATOR, eval_index), &mut noise)?;
        state = state.condition_on(observed.clone())?;
        current.push(observed.clone());
        let (recommendation, recommendation_mean) = recommend(&disc, &disc_means(&state)?);
        trace.push(TraceStep {
            iteration,
            chosen: pick.chosen,
            observed,
            score: pick.score,
            all_scores: spec.keep_scores.then_some(pick.all_scores),
            recommendation,
            recommendation_mean,
        });
    }
    let (recommendation, recommendation_mean) = match trace.last() {
        Some(s) => (s.recommendation.clone(), s.recommendation_mean),
        None => recommend(&disc, &disc_means(&state)?),
    };
    Ok(RunResult {
        algorithm: spec.algorithm,
        seed,
        initial,
        trace,
        recommendation,
        recommendation_mean,
    })
}

pub fn run_wskg(spec: &RunSpec, seed: u64) -> Result<RunResult> {
    if spec.algorithm != Algorithm::Wskg {
        return Err(Error::invalid(format!("run_wskg called with algorithm {}", spec.algorithm)));
    }
    run_replication(spec, seed)
}

pub fn run_baseline(spec: &RunSpec, seed: u64) -> Result<RunResult> {
    if spec.algorithm == Algorithm::Wskg {
        return Err(Error::invalid("run_baseline needs KG or EGO"));
    }
    run_replication(spec, seed)
}
