//! Replicated experiments, gain curves and their CSV form.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::design::latin_hypercube;
use crate::gp::{Observation, TrainingSet};
use crate::hyper::{map_estimate, FitReport, HyperPrior, MapSettings};
use crate::rng;
use crate::runner::history::{load_history, merge_histories, HistoryFile};
use crate::runner::hyperfile::load_hyperparams;
use crate::runner::instance::{Instance, Truth};
use crate::runner::run::{run_replication, Algorithm, RunResult, RunSpec};
use crate::{Error, Result};

/// An experiment as described on the command line, before files are read.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub instance: Instance,
    pub algorithm: Algorithm,
    pub budget: usize,
    pub n_initial: usize,
    pub history_paths: Vec<PathBuf>,
    pub hyperparams_path: PathBuf,
    pub disc_size: usize,
    pub replications: usize,
    pub seed: u64,
}

impl ExperimentConfig {
    pub const DEFAULT_REPLICATIONS: usize = 100;

    pub fn new(instance: Instance, algorithm: Algorithm, hyperparams_path: impl Into<PathBuf>) -> Self {
        Self {
            budget: instance.default_budget(),
            n_initial: instance.default_n_initial(),
            disc_size: instance.default_disc_size(),
            instance,
            algorithm,
            history_paths: Vec::new(),
            hyperparams_path: hyperparams_path.into(),
            replications: Self::DEFAULT_REPLICATIONS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::invalid("budget must be at least 1"));
        }
        if self.replications == 0 {
            return Err(Error::invalid("replications must be at least 1"));
        }
        match (self.algorithm, self.history_paths.is_empty()) {
            (Algorithm::Wskg, true) => Err(Error::invalid("WSKG requires at least one --history file")),
            (Algorithm::Kg | Algorithm::Ego, false) => Err(Error::invalid(format!("{} takes no --history", self.algorithm))),
            _ => Ok(()),
        }
    }

    /// Validates, reads the history and hyperparameter files and builds the run spec.
    pub fn load(&self) -> Result<RunSpec> {
        self.validate()?;
        let hyper = load_hyperparams(&self.hyperparams_path)?;
        let files = self.history_paths.iter().map(load_history).collect::<Result<Vec<_>>>()?;
        let history = merge_histories(&files)?;
        if self.algorithm == Algorithm::Wskg && history.is_empty() {
            return Err(Error::invalid("WSKG requires a nonempty history; the given files hold no records"));
        }
        let spec = RunSpec {
            instance: self.instance.clone(),
            algorithm: self.algorithm,
            budget: self.budget,
            n_initial: self.n_initial,
            disc_size: self.disc_size,
            hyper,
            history,
            keep_scores: false,
            disc_seed: None,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Mean gain over the initial solution per iteration `1..=budget`.
#[derive(Clone, Debug, PartialEq)]
pub struct GainCurve {
    pub instance: String,
    pub algorithm: Algorithm,
    pub mean: Vec<f64>,
    /// Standard error of the mean; `None` with a single replication.
    pub se: Vec<Option<f64>>,
    pub n: usize,
}

impl GainCurve {
    /// Curve from per-replication gain rows of equal length.
    pub fn from_gains(instance: &str, algorithm: Algorithm, gains: &[Vec<f64>]) -> Result<Self> {
        let n = gains.len();
        let budget = gains.first().map_or(0, Vec::len);
        if n == 0 || gains.iter().any(|g| g.len() != budget) {
            return Err(Error::invalid("gain rows must be nonempty and of equal length"));
        }
        let mut mean = Vec::with_capacity(budget);
        let mut se = Vec::with_capacity(budget);
        for t in 0..budget {
            let m = gains.iter().map(|g| g[t]).sum::<f64>() / n as f64;
            mean.push(m);
            se.push((n > 1).then(|| {
                let var = gains.iter().map(|g| (g[t] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            }));
        }
        Ok(Self {
            instance: instance.to_string(),
            algorithm,
            mean,
            se,
            n,
        })
    }

    pub fn budget(&self) -> usize {
        self.mean.len()
    }

    /// `(mean − 2·se, mean + 2·se)` at 1-based iteration `t`.
    pub fn band(&self, t: usize) -> (f64, f64) {
        let m = self.mean[t - 1];
        let s = self.se[t - 1].unwrap_or(0.0);
        (m - 2.0 * s, m + 2.0 * s)
    }
}

/// One successful replication.
#[derive(Clone, Debug)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub result: RunResult,
    /// True value of the best initial point.
    pub initial_best: f64,
    /// Gain at iterations `1..=budget`.
    pub gains: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub curve: GainCurve,
    pub records: Vec<ReplicationRecord>,
    /// `(replication, error message)` of runs that aborted.
    pub failures: Vec<(usize, String)>,
}

/// Gain at each iteration: best true value among points evaluated so far
/// minus the best true value of the initial design.
pub fn gains(result: &RunResult, instance: &Instance, truth: &Truth) -> Result<(f64, Vec<f64>)> {
    let initial_best = result
        .initial
        .iter()
        .map(|o| truth.value(instance, &o.point))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut best = initial_best;
    let mut out = Vec::with_capacity(result.trace.len());
    for step in &result.trace {
        best = best.max(truth.value(instance, &step.chosen)?);
        out.push(best - initial_best);
    }
    Ok((initial_best, out))
}

/// More than 5% of the replications failed.
pub fn too_many_failures(failed: usize, replications: usize) -> bool {
    failed * 20 > replications
}

/// Runs replications `1..=replications` with seeds `seed + r` and averages
/// their gains. More than 5% failed replications fail the experiment.
pub fn replicate(spec: &RunSpec, replications: usize, seed: u64, truth: &Truth) -> Result<ExperimentOutcome> {
    if replications == 0 {
        return Err(Error::invalid("replications must be at least 1"));
    }
    spec.validate()?;
    let runs: Vec<(usize, Result<ReplicationRecord>)> = (1..=replications)
        .into_par_iter()
        .map(|r| {
            let record = run_replication(spec, seed.wrapping_add(r as u64)).and_then(|result| {
                let (initial_best, gains) = gains(&result, &spec.instance, truth)?;
                Ok(ReplicationRecord {
                    replication: r,
                    result,
                    initial_best,
                    gains,
                })
            });
            (r, record)
        })
        .collect();
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (r, rec) in runs {
        match rec {
            Ok(rec) => records.push(rec),
            Err(e) => failures.push((r, e.to_string())),
        }
    }
    if too_many_failures(failures.len(), replications) {
        return Err(Error::Experiment(format!(
            "{} of {replications} replications of {} on {} failed; first: replication {}: {}",
            failures.len(),
            spec.algorithm,
            spec.instance,
            failures[0].0,
            failures[0].1
        )));
    }
    let rows: Vec<Vec<f64>> = records.iter().map(|r| r.gains.clone()).collect();
    let curve = GainCurve::from_gains(&spec.instance.name(), spec.algorithm, &rows)?;
    Ok(ExperimentOutcome {
        curve,
        records,
        failures,
    })
}

/// Replicates every spec on the same seeds, so each replication starts all
/// algorithms from the same initial observations.
pub fn compare(specs: &[RunSpec], replications: usize, seed: u64, truth: &Truth) -> Result<Vec<ExperimentOutcome>> {
    if specs.is_empty() {
        return Err(Error::invalid("nothing to compare"));
    }
    let name = specs[0].instance.name();
    if specs.iter().any(|s| s.instance.name() != name || s.n_initial != specs[0].n_initial) {
        return Err(Error::invalid("compared runs must share the instance and the initial design size"));
    }
    specs.iter().map(|s| replicate(s, replications, seed, truth)).collect()
}

const HEADER: &str = "iteration,algorithm,mean_gain,se,n";

/// CSV text for curves of one instance, rows sorted by (algorithm, iteration).
pub fn format_results(curves: &[GainCurve]) -> String {
    let mut sorted: Vec<&GainCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| c.algorithm.name());
    let mut out = format!("{HEADER}\n");
    for c in sorted {
        for (t, (m, se)) in c.mean.iter().zip(&c.se).enumerate() {
            let se = se.map(|s| s.to_string()).unwrap_or_default();
            writeln!(out, "{},{},{m},{se},{}", t + 1, c.algorithm, c.n).unwrap();
        }
    }
    out
}

/// Writes `<dir>/<instance>.csv` for every instance among `curves`; returns the paths written.
pub fn emit_results(curves: &[GainCurve], dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if curves.is_empty() {
        return Err(Error::invalid("no gain curves to write"));
    }
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut by_instance: BTreeMap<&str, Vec<GainCurve>> = BTreeMap::new();
    for c in curves {
        by_instance.entry(&c.instance).or_default().push(c.clone());
    }
    let mut paths = Vec::new();
    for (instance, group) in by_instance {
        let path = dir.join(format!("{instance}.csv"));
        std::fs::write(&path, format_results(&group)).map_err(|e| Error::io(&path, e))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn parse_results(text: &str, instance: &str, path: &Path) -> Result<Vec<GainCurve>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, h)) if h.trim() == HEADER => {}
        _ => return Err(err(1, format!("expected header '{HEADER}'"))),
    }
    let mut curves: Vec<GainCurve> = Vec::new();
    for (i, line) in lines {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(err(i + 1, format!("row has {} fields, expected 5", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, format!("'{s}' is not a number")));
        let iteration: usize = f[0].parse().map_err(|_| err(i + 1, format!("bad iteration '{}'", f[0])))?;
        let algorithm: Algorithm = f[1].parse().map_err(|e: Error| err(i + 1, e.to_string()))?;
        let mean = num(f[2])?;
        let se = if f[3].is_empty() { None } else { Some(num(f[3])?) };
        let n: usize = f[4].parse().map_err(|_| err(i + 1, format!("bad count '{}'", f[4])))?;
        if curves.last().map(|c| c.algorithm) != Some(algorithm) {
            curves.push(GainCurve {
                instance: instance.to_string(),
                algorithm,
                mean: Vec::new(),
                se: Vec::new(),
                n,
            });
        }
        let c = curves.last_mut().unwrap();
        if iteration != c.mean.len() + 1 || n != c.n {
            return Err(err(i + 1, "rows out of order or inconsistent replication count".into()));
        }
        c.mean.push(mean);
        c.se.push(se);
    }
    Ok(curves)
}

/// Reads a file written by [`emit_results`]; the instance is the file stem.
pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<GainCurve>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let instance = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    parse_results(&text, instance, path)
}

/// `n` Latin-hypercube points on task 0 of `instance`, for hyperparameter fitting.
pub fn pilot_observations(instance: &Instance, n: usize, seed: u64) -> Result<Vec<Observation>> {
    let mut design = rng::stream(seed, rng::PILOT, 0);
    let mut noise = rng::stream(seed, rng::PILOT, 1);
    latin_hypercube(&instance.domain(), n, &mut design)
        .iter()
        .enumerate()
        .map(|(i, x)| instance.evaluate(x, rng::stream_seed(seed, rng::PILOT, 2 + i as u64), &mut noise))
        .collect()
}

/// MAP fit on pilot data of `instance` (task 0) together with `history` (tasks 1..=M).
pub fn fit_hyperparams(instance: &Instance, pilot: usize, history: &HistoryFile, prior: &HyperPrior, settings: &MapSettings) -> Result<FitReport> {
    if !history.is_empty() && history.dim() != instance.dim() {
        return Err(Error::invalid(format!("history has dimension {}, instance {} has {}", history.dim(), instance, instance.dim())));
    }
    let mut training: TrainingSet = history.training();
    for o in pilot_observations(instance, pilot, settings.seed)? {
        training.push(o);
    }
    map_estimate(prior, &training, settings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{JointHyperParams, KernelFamily, KernelParams};

    fn spec(algorithm: Algorithm) -> RunSpec {
        let base = KernelParams::new(KernelFamily::Matern52, 4.0e5, vec![0.8, 1.2]).unwrap();
        let mut s = RunSpec::new(Instance::named("RB2").unwrap(), algorithm, JointHyperParams::single_task(-400.0, base));
        s.budget = 3;
        s.disc_size = 40;
        s
    }

    #[test]
    fn single_replication_has_no_standard_error() {
        let out = replicate(&spec(Algorithm::Kg), 1, 0, &Truth::default()).unwrap();
        assert_eq!(out.curve.n, 1);
        assert!(out.curve.se.iter().all(Option::is_none));
        assert_eq!(out.curve.budget(), 3);
    }

    #[test]
    fn gains_are_monotone_and_baselines_shared() {
        let outs = compare(&[spec(Algorithm::Kg), spec(Algorithm::Ego)], 4, 10, &Truth::default()).unwrap();
        for out in &outs {
            for rec in &out.records {
                assert!(rec.gains.windows(2).all(|w| w[1] >= w[0]));
                assert!(rec.gains[0] >= 0.0);
            }
        }
        for (a, b) in outs[0].records.iter().zip(&outs[1].records) {
            assert_eq!(a.initial_best, b.initial_best);
            assert_eq!(a.result.initial, b.result.initial);
        }
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let curves = vec![
            GainCurve::from_gains("RB1", Algorithm::Kg, &[vec![0.1, 0.2], vec![0.3, 1.0 / 3.0]]).unwrap(),
            GainCurve::from_gains("RB1", Algorithm::Ego, &[vec![0.0, 0.5]]).unwrap(),
        ];
        let paths = emit_results(&curves, dir.path()).unwrap();
        assert_eq!(paths, vec![dir.path().join("RB1.csv")]);
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text.matches("iteration,").count(), 1);
        let algs: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(algs, vec!["EGO", "EGO", "KG", "KG"]);
        let back = read_results(&paths[0]).unwrap();
        assert_eq!(back, vec![curves[1].clone(), curves[0].clone()]);
    }

    #[test]
    fn config_validation() {
        let inst = Instance::named("RB1").unwrap();
        let mut c = ExperimentConfig::new(inst, Algorithm::Wskg, "hp.txt");
        assert!(c.validate().is_err());
        c.history_paths.push("h.csv".into());
        assert!(c.validate().is_ok());
        c.algorithm = Algorithm::Ego;
        assert!(c.validate().is_err());
        c.history_paths.clear();
        c.budget = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn empty_history_file_is_rejected_for_wskg() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("h.csv");
        std::fs::write(&h, "").unwrap();
        let hp = dir.path().join("hp.txt");
        crate::runner::hyperfile::save_hyperparams(&spec(Algorithm::Kg).hyper, &hp).unwrap();
        let mut c = ExperimentConfig::new(Instance::named("RB1").unwrap(), Algorithm::Wskg, &hp);
        c.history_paths.push(h);
        let e = c.load().unwrap_err().to_string();
        assert!(e.contains("nonempty history"), "{e}");
        c.algorithm = Algorithm::Kg;
        c.history_paths.clear();
        assert!(c.load().is_ok());
    }

    #[test]
    fn failure_threshold_is_five_percent() {
        assert!(!too_many_failures(5, 100));
        assert!(too_many_failures(6, 100));
        assert!(!too_many_failures(0, 1));
        assert!(too_many_failures(1, 19));
    }
}
