//! Comparative experiments on the benchmark suites, following the shipped
//! recipes: hyperparameters are fit once per suite on pilot data and kept
//! fixed during the runs.

use std::time::Instant;

use wsbo::hyper::{HyperPrior, MapSettings};
use wsbo::runner::{
    compare, fit_hyperparams, run_replication, Algorithm, ExperimentOutcome, GainCurve, HistoryFile, Instance, RunSpec, Truth,
};
use wsbo::{JointHyperParams, Result};

/// MAP fit with a flat prior on `pilot` points of `instance` plus `history`.
pub fn fit(instance: &Instance, pilot: usize, history: &HistoryFile, seed: u64) -> Result<JointHyperParams> {
    let settings = MapSettings {
        seed,
        ..MapSettings::default()
    };
    Ok(fit_hyperparams(instance, pilot, history, &HyperPrior::Flat, &settings)?.best_params)
}

/// One cold-KG run on `instance`, saved as previous task `task`.
pub fn history_from_run(instance: &Instance, hyper: &JointHyperParams, budget: usize, disc_size: usize, seed: u64, task: usize) -> Result<HistoryFile> {
    let mut spec = RunSpec::new(instance.clone(), Algorithm::Kg, hyper.clone());
    spec.budget = budget;
    spec.disc_size = disc_size;
    let run = run_replication(&spec, seed)?;
    HistoryFile::from_run(&run.observations(), task)
}

/// Outcome of the degeneracy check: replications compared and how many matched exactly.
pub fn degeneracy(instance: &Instance, hyper: &JointHyperParams, replications: usize, budget: usize, seed: u64) -> Result<(usize, usize)> {
    let mut matched = 0;
    for r in 1..=replications as u64 {
        let mut kg = RunSpec::new(instance.clone(), Algorithm::Kg, hyper.without_deltas());
        kg.budget = budget;
        kg.keep_scores = true;
        let mut ws = kg.clone();
        ws.algorithm = Algorithm::Wskg;
        let (a, b) = (run_replication(&kg, seed + r)?, run_replication(&ws, seed + r)?);
        let same = a.initial == b.initial
            && a.recommendation == b.recommendation
            && a.trace.len() == b.trace.len()
            && a.trace.iter().zip(&b.trace).all(|(x, y)| {
                x.chosen == y.chosen
                    && x.observed == y.observed
                    && x.recommendation == y.recommendation
                    && x.recommendation_mean.to_bits() == y.recommendation_mean.to_bits()
                    && x.all_scores.iter().flatten().map(|v| v.to_bits()).eq(y.all_scores.iter().flatten().map(|v| v.to_bits()))
            });
        matched += same as usize;
    }
    Ok((matched, replications))
}

/// Per-replication gains of one algorithm, keyed by replication index.
pub type ReplicationGains = Vec<(usize, Vec<f64>)>;

/// Gain curves of one instance, one per algorithm that was run.
#[derive(Clone, Debug)]
pub struct InstanceCurves {
    pub instance: String,
    pub curves: Vec<GainCurve>,
    pub failures: usize,
    pub gains: Vec<(Algorithm, ReplicationGains)>,
}

impl InstanceCurves {
    pub fn get(&self, algorithm: Algorithm) -> Option<&GainCurve> {
        self.curves.iter().find(|c| c.algorithm == algorithm)
    }

    /// Mean and standard error of the per-replication difference `a - b` at
    /// iteration `t`, over replications both algorithms completed, and their count.
    pub fn paired_difference(&self, a: Algorithm, b: Algorithm, t: usize) -> Option<(f64, f64, usize)> {
        let of = |alg| self.gains.iter().find(|(g, _)| *g == alg).map(|(_, r)| r);
        let (ga, gb) = (of(a)?, of(b)?);
        let diffs: Vec<f64> = ga
            .iter()
            .filter_map(|(r, x)| gb.iter().find(|(s, _)| s == r).map(|(_, y)| x[t - 1] - y[t - 1]))
            .collect();
        let n = diffs.len();
        if n < 2 {
            return None;
        }
        let (mean, se) = crate::oracle::mean_and_se(diffs.iter().copied());
        Some((mean, se, n))
    }

    fn from_outcomes(instance: &Instance, outcomes: Vec<ExperimentOutcome>) -> Self {
        Self {
            instance: instance.name(),
            failures: outcomes.iter().map(|o| o.failures.len()).sum(),
            gains: outcomes
                .iter()
                .map(|o| (o.curve.algorithm, o.records.iter().map(|r| (r.replication, r.gains.clone())).collect()))
                .collect(),
            curves: outcomes.into_iter().map(|o| o.curve).collect(),
        }
    }
}

/// Settings of a comparative study on one suite.
#[derive(Clone, Debug)]
pub struct StudySettings {
    pub replications: usize,
    pub seed: u64,
    pub pilot: usize,
    pub history_budget: usize,
    pub disc_size: usize,
}

#[derive(Clone, Debug)]
pub struct RosenbrockStudy {
    pub wskg_hyper: JointHyperParams,
    pub history_len: usize,
    pub per_instance: Vec<InstanceCurves>,
    pub seconds: f64,
}

/// RB1 history from one cold-KG run; WSKG hyperparameters fit on RB2 pilot
/// data together with that history and reused on RB2..RB4. The baselines use
/// per-instance fits. KG and EGO run `baseline_budget` iterations on RB1..RB4;
/// WSKG runs `wskg_budget` iterations on RB2..RB4.
pub fn rosenbrock_study(s: &StudySettings, wskg_budget: usize, baseline_budget: usize) -> Result<RosenbrockStudy> {
    let start = Instant::now();
    let truth = Truth::default();
    let names = ["RB1", "RB2", "RB3", "RB4"];
    let instances: Vec<Instance> = names.iter().map(|n| Instance::named(n)).collect::<Result<_>>()?;
    let baseline_hp: Vec<JointHyperParams> = instances
        .iter()
        .enumerate()
        .map(|(i, inst)| fit(inst, s.pilot, &HistoryFile::empty(), s.seed + 100 + i as u64))
        .collect::<Result<_>>()?;
    let history = history_from_run(&instances[0], &baseline_hp[0], s.history_budget, s.disc_size, s.seed + 200, 1)?;
    let wskg_hyper = fit(&instances[1], s.pilot, &history, s.seed + 300)?;

    let mut per_instance = Vec::new();
    for (inst, hp) in instances.iter().zip(&baseline_hp) {
        let mut specs = Vec::new();
        for alg in [Algorithm::Kg, Algorithm::Ego] {
            let mut spec = RunSpec::new(inst.clone(), alg, hp.clone());
            spec.budget = baseline_budget;
            spec.disc_size = s.disc_size;
            specs.push(spec);
        }
        if inst.name() != "RB1" {
            let mut spec = RunSpec::new(inst.clone(), Algorithm::Wskg, wskg_hyper.clone());
            spec.budget = wskg_budget;
            spec.disc_size = s.disc_size;
            spec.history = history.clone();
            specs.push(spec);
        }
        let outcomes = compare(&specs, s.replications, s.seed, &truth)?;
        per_instance.push(InstanceCurves::from_outcomes(inst, outcomes));
    }
    Ok(RosenbrockStudy {
        wskg_hyper,
        history_len: history.len(),
        per_instance,
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug)]
pub struct AtoStudy {
    pub wskg_hyper: JointHyperParams,
    pub history_len: usize,
    pub curves: InstanceCurves,
    pub seconds: f64,
}

/// ATO1 and ATO2 histories from cold-KG runs; WSKG hyperparameters fit on
/// ATO4 pilot data with both histories; WSKG and KG compared on ATO3.
pub fn ato_study(s: &StudySettings, budget: usize, truth_replications: usize) -> Result<AtoStudy> {
    let start = Instant::now();
    let truth = Truth::new(truth_replications, Truth::DEFAULT_ATO_SEED)?;
    let inst = |n: &str| Instance::named(n);
    let (a1, a2, a3, a4) = (inst("ATO1")?, inst("ATO2")?, inst("ATO3")?, inst("ATO4")?);
    let hp1 = fit(&a1, s.pilot, &HistoryFile::empty(), s.seed + 101)?;
    let hp2 = fit(&a2, s.pilot, &HistoryFile::empty(), s.seed + 102)?;
    let hp3 = fit(&a3, s.pilot, &HistoryFile::empty(), s.seed + 103)?;
    let h1 = history_from_run(&a1, &hp1, s.history_budget, s.disc_size, s.seed + 201, 1)?;
    let h2 = history_from_run(&a2, &hp2, s.history_budget, s.disc_size, s.seed + 202, 2)?;
    let history = wsbo::runner::merge_histories(&[h1, h2])?;
    let wskg_hyper = fit(&a4, s.pilot, &history, s.seed + 300)?;

    let mut kg = RunSpec::new(a3.clone(), Algorithm::Kg, hp3);
    kg.budget = budget;
    kg.disc_size = s.disc_size;
    let mut ws = RunSpec::new(a3.clone(), Algorithm::Wskg, wskg_hyper.clone());
    ws.budget = budget;
    ws.disc_size = s.disc_size;
    ws.history = history.clone();
    let outcomes = compare(&[ws, kg], s.replications, s.seed, &truth)?;
    Ok(AtoStudy {
        wskg_hyper,
        history_len: history.len(),
        curves: InstanceCurves::from_outcomes(&a3, outcomes),
        seconds: start.elapsed().as_secs_f64(),
    })
}
