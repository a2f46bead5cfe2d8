//! Oracle and property suites. Each returns a [`Check`] with a one-line summary.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use wsbo::acquisition::{ei_scores, expected_max_affine, kg_factor, CandidateSet, KgGrid};
use wsbo::benchmarks::{ato_simulate, AtoConfig, RosenbrockId, RosenbrockVariant};
use wsbo::hyper::{grad_log_posterior, log_posterior, HyperPrior, ParamLayout};
use wsbo::runner::{
    load_history, replicate, run_replication, save_history, Algorithm, HistoryFile, Instance, RunSpec, Truth,
};
use wsbo::{JointHyperParams, KernelFamily, KernelParams, Observation, Posterior, TaskPoint, TrainingSet};

use crate::oracle::{self, DenseGp};

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn family(rng: &mut impl Rng) -> KernelFamily {
    if rng.random_bool(0.5) {
        KernelFamily::Matern52
    } else {
        KernelFamily::SquaredExponential
    }
}

fn random_kernel(rng: &mut impl Rng, family: KernelFamily, dim: usize, amplitude: (f64, f64)) -> KernelParams {
    let amp = rng.random_range(amplitude.0..amplitude.1);
    KernelParams::new(family, amp, (0..dim).map(|_| rng.random_range(0.2..1.5)).collect()).unwrap()
}

pub fn random_hyper(rng: &mut impl Rng, dim: usize, n_previous: usize) -> JointHyperParams {
    let fam = family(rng);
    let base = random_kernel(rng, fam, dim, (0.5, 3.0));
    let deltas = (0..n_previous).map(|_| random_kernel(rng, fam, dim, (0.01, 0.5))).collect();
    JointHyperParams::new(rng.random_range(-2.0..2.0), base, deltas).unwrap()
}

fn random_point(rng: &mut impl Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

pub fn random_training(rng: &mut impl Rng, n: usize, dim: usize, n_previous: usize, min_noise: f64) -> TrainingSet {
    (0..n)
        .map(|_| {
            let task = rng.random_range(0..=n_previous);
            let x = random_point(rng, dim);
            let y = (3.0 * x[0]).sin() + rng.random_range(-0.5..0.5) + task as f64 * 0.1;
            Observation::new(task, x, y, rng.random_range(min_noise..0.3)).unwrap()
        })
        .collect()
}

/// Factorized posterior vs an explicit-inverse posterior on `problems` random models.
pub fn gp_oracle(problems: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..problems {
        let dim = rng.random_range(1..=3);
        let m = rng.random_range(0..=3);
        let n = rng.random_range(1..=30);
        let hp = random_hyper(&mut rng, dim, m);
        let training = random_training(&mut rng, n, dim, m, 1e-3);
        let post = Posterior::fit(hp.clone(), training.clone()).unwrap();
        let dense = DenseGp::new(&hp, &training, post.jitter()).expect("invertible");
        let queries: Vec<Vec<f64>> = (0..4).map(|_| random_point(&mut rng, dim)).collect();
        for (i, x) in queries.iter().enumerate() {
            let (mean, var) = post.mean_var(x).unwrap();
            worst = worst.max((mean - dense.mean(x)).abs()).max((var - dense.cov(x, x)).abs());
            for y in &queries[i + 1..] {
                worst = worst.max((post.cov(x, y).unwrap() - dense.cov(x, y)).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        "posterior vs dense inverse",
        worst < 1e-8 && secs < 10.0,
        format!("{problems} problems, max abs error {worst:.2e} (tol 1e-8), {secs:.1}s"),
    )
}

fn random_affine(rng: &mut impl Rng) -> (Vec<f64>, Vec<f64>) {
    let k = rng.random_range(1..=12);
    let mut a: Vec<f64> = (0..k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut b: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
    if k > 2 && rng.random_bool(0.3) {
        // repeated slopes and dominated lines
        b[1] = b[0];
        a[2] = a[0] - 0.5;
        b[2] = b[0];
    }
    (a, b)
}

/// Expected maximum of affine functions and the KG factor vs Monte Carlo.
pub fn kg_oracle(affine_cases: usize, affine_draws: usize, kg_cases: usize, kg_draws: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<(Vec<f64>, Vec<f64>)> = (0..affine_cases).map(|_| random_affine(&mut rng)).collect();
    let affine_z: Vec<f64> = cases
        .par_iter()
        .enumerate()
        .map(|(i, (a, b))| {
            let exact = expected_max_affine(a, b).unwrap();
            let mut r = ChaCha8Rng::seed_from_u64(seed ^ (0x1000 + i as u64));
            let (est, se) = oracle::mc_expected_max(a, b, affine_draws, &mut r);
            if se == 0.0 {
                if (exact - est).abs() < 1e-12 { 0.0 } else { f64::INFINITY }
            } else {
                (exact - est).abs() / se
            }
        })
        .collect();

    let mut kg_z = Vec::new();
    for i in 0..kg_cases {
        let hp = random_hyper(&mut rng, 2, 0);
        let n = rng.random_range(2..=8);
        let training = random_training(&mut rng, n, 2, 0, 0.01);
        let post = Posterior::fit(hp.clone(), training.clone()).unwrap();
        let dense = DenseGp::new(&hp, &training, post.jitter()).unwrap();
        let disc_pts: Vec<Vec<f64>> = (0..25).map(|_| random_point(&mut rng, 2)).collect();
        let x = if i % 2 == 0 { disc_pts[rng.random_range(0..25)].clone() } else { random_point(&mut rng, 2) };
        let noise = rng.random_range(0.0..0.3);
        let disc = CandidateSet::new(disc_pts.clone()).unwrap();
        let exact = kg_factor(&post, &x, &disc, noise).unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ (0x2000 + i as u64));
        let (est, se) = oracle::mc_knowledge_gradient(&dense, &x, &disc_pts, noise, kg_draws, &mut r);
        kg_z.push(if se == 0.0 { (exact - est).abs() / 1e-12 } else { (exact - est).abs() / se });
    }
    let max = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
    let (za, zk) = (max(&affine_z), max(&kg_z));
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        "knowledge gradient vs Monte Carlo",
        za <= 3.0 && zk <= 3.0 && secs < 300.0,
        format!(
            "expected max: {affine_cases} cases x {affine_draws} draws, worst {za:.2} SE; KG: {kg_cases} posteriors x {kg_draws} draws, worst {zk:.2} SE (tol 3 SE), {secs:.1}s"
        ),
    )
}

fn random_prior(rng: &mut impl Rng, layout: &ParamLayout) -> HyperPrior {
    if rng.random_bool(0.3) {
        return HyperPrior::Flat;
    }
    let p = layout.n_positive();
    HyperPrior::log_normal(
        (0..p).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..p).map(|_| rng.random_range(0.3..2.0)).collect(),
    )
    .unwrap()
}

/// Analytic log-posterior gradient vs central differences (step 1e-5 in log space).
pub fn gradient_oracle(configs: usize, seed: u64) -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let dim = rng.random_range(1..=3);
        let m = rng.random_range(0..=2);
        let hp = random_hyper(&mut rng, dim, m);
        let n = rng.random_range(8..=25);
        let training = random_training(&mut rng, n, dim, m, 0.01);
        let layout = ParamLayout::of(&hp);
        let prior = random_prior(&mut rng, &layout);
        let g = grad_log_posterior(&hp, &prior, &training).unwrap();
        let v = layout.to_vector(&hp);
        let fd = oracle::central_gradient(|p| log_posterior(&layout.from_vector(p).unwrap(), &prior, &training).unwrap(), &v, 1e-5);
        let diff = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = fd.iter().map(|b| b * b).sum::<f64>().sqrt().max(1e-12);
        worst = worst.max(diff / scale);
    }
    let secs = start.elapsed().as_secs_f64();
    Check::new(
        "log-posterior gradient vs finite differences",
        worst < 1e-5 && secs < 30.0,
        format!("{configs} configurations, worst relative error {worst:.2e} (tol 1e-5), {secs:.1}s"),
    )
}

/// `Err` carries the first violated property.
type Probe = fn() -> Result<(), String>;

fn fail_if(cond: bool, msg: &str) -> Result<(), String> {
    if cond {
        Err(msg.to_string())
    } else {
        Ok(())
    }
}

fn kernel_psd() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    for _ in 0..30 {
        let dim = rng.random_range(1..=4);
        let m = rng.random_range(0..=3);
        let hp = random_hyper(&mut rng, dim, m);
        let pts: Vec<TaskPoint> = (0..25).map(|_| TaskPoint::new(rng.random_range(0..=m), random_point(&mut rng, dim))).collect();
        let k = hp.gram(&pts).unwrap();
        let min = k.clone().symmetric_eigenvalues().min();
        let scale = k.diagonal().max();
        if min < -1e-10 * scale {
            return Err(format!("gram matrix eigenvalue {min:e}"));
        }
    }
    Ok(())
}

fn noiseless_interpolation() -> Result<(), String> {
    // Well-separated points keep the Gram matrix far from singular, so the
    // stabilising jitter moves the interpolant by much less than the tolerance.
    let mut rng = ChaCha8Rng::seed_from_u64(82);
    for _ in 0..20 {
        let dim = rng.random_range(1..=3);
        let m = rng.random_range(0..=2);
        let fam = family(&mut rng);
        let base = KernelParams::isotropic(fam, rng.random_range(0.5..3.0), 0.25, dim).unwrap();
        let deltas = (0..m).map(|_| KernelParams::isotropic(fam, 0.2, 0.25, dim).unwrap()).collect();
        let hp = JointHyperParams::new(0.3, base, deltas).unwrap();
        let mut obs: Vec<Observation> = Vec::new();
        while obs.len() < 6 {
            let task = rng.random_range(0..=m);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let far = obs.iter().all(|o| o.point.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() > 0.5);
            if far {
                obs.push(Observation::new(task, x, rng.random_range(-2.0..2.0), 0.0).unwrap());
            }
        }
        let post = Posterior::fit(hp, obs.clone().into()).map_err(|e| e.to_string())?;
        for o in obs.iter().filter(|o| o.task == 0) {
            let (mean, var) = post.mean_var(&o.point).map_err(|e| e.to_string())?;
            if (mean - o.value).abs() > 1e-6 || var > 1e-6 {
                return Err(format!("noiseless fit misses a data point by {:e} (variance {var:e})", (mean - o.value).abs()));
            }
        }
    }
    Ok(())
}

fn acquisition_nonnegative() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(83);
    for _ in 0..20 {
        let hp = random_hyper(&mut rng, 2, 1);
        let post = Posterior::fit(hp.clone(), random_training(&mut rng, 10, 2, 1, 0.0)).unwrap();
        let cands = CandidateSet::new((0..40).map(|_| random_point(&mut rng, 2)).collect()).unwrap();
        let kg = KgGrid::new(&hp, &cands, &cands).unwrap().scores(&post, &[0.05; 40]).unwrap();
        let best = rng.random_range(-3.0..3.0);
        let ei = ei_scores(&post, &cands, best).unwrap();
        if let Some(v) = kg.iter().chain(&ei).find(|v| (**v).is_nan() || **v < 0.0) {
            return Err(format!("negative acquisition value {v:e}"));
        }
    }
    Ok(())
}

fn rb_hyper() -> JointHyperParams {
    let base = KernelParams::new(KernelFamily::Matern52, 3.0e5, vec![0.9, 1.4]).unwrap();
    JointHyperParams::single_task(-300.0, base)
}

fn small_spec(name: &str, algorithm: Algorithm) -> RunSpec {
    let mut spec = RunSpec::new(Instance::named(name).unwrap(), algorithm, rb_hyper());
    spec.budget = 6;
    spec.disc_size = 80;
    spec.keep_scores = true;
    spec
}

fn incumbent_monotone() -> Result<(), String> {
    let truth = Truth::default();
    for alg in [Algorithm::Kg, Algorithm::Ego] {
        let out = replicate(&small_spec("RB2", alg), 6, 3, &truth).map_err(|e| e.to_string())?;
        for rec in &out.records {
            if rec.gains.windows(2).any(|w| w[1] < w[0]) || rec.gains[0] < 0.0 {
                return Err(format!("{alg} replication {} gain decreases: {:?}", rec.replication, rec.gains));
            }
        }
    }
    Ok(())
}

fn audit_scores() -> Result<(), String> {
    for alg in [Algorithm::Kg, Algorithm::Ego] {
        let r = run_replication(&small_spec("RB4", alg), 17).map_err(|e| e.to_string())?;
        for step in &r.trace {
            let scores = step.all_scores.as_ref().ok_or("scores were not kept")?;
            if scores.iter().any(|s| *s > step.score) {
                return Err(format!("{alg} iteration {} did not choose a maximal score", step.iteration));
            }
        }
    }
    Ok(())
}

fn history_round_trip() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(84);
    let records: Vec<Observation> = (0..100)
        .map(|_| {
            let x = vec![rng.random_range(-2.0..2.0), rng.random::<f64>() / 3.0, rng.random_range(-1e8..1e8)];
            Observation::new(rng.random_range(1..=3), x, rng.random::<f64>().ln(), rng.random::<f64>() * 1e-9).unwrap()
        })
        .collect();
    let h = HistoryFile::new(3, records).map_err(|e| e.to_string())?;
    let dir = tempfile_dir()?;
    let path = dir.join("history.csv");
    save_history(&h, &path).map_err(|e| e.to_string())?;
    let back = load_history(&path).map_err(|e| e.to_string())?;
    std::fs::remove_dir_all(&dir).ok();
    fail_if(back != h, "history changed in a save/load round trip")
}

fn tempfile_dir() -> Result<std::path::PathBuf, String> {
    let dir = std::env::temp_dir().join(format!("wsbo-verify-{}-{}", std::process::id(), rand::random::<u64>()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    Ok(dir)
}

fn deterministic_replay() -> Result<(), String> {
    let spec = small_spec("RB3", Algorithm::Kg);
    if run_replication(&spec, 5).map_err(|e| e.to_string())? != run_replication(&spec, 5).map_err(|e| e.to_string())? {
        return Err("KG run differs under the same seed".into());
    }
    let cfg = AtoConfig::default_config();
    let x = [3.0, 7.5, 2.2, 9.0, 4.4, 6.1, 1.0, 5.5];
    if ato_simulate(&cfg, &x, 6, 11).map_err(|e| e.to_string())? != ato_simulate(&cfg, &x, 6, 11).map_err(|e| e.to_string())? {
        return Err("simulation differs under the same seed".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let v = RosenbrockVariant::with_default_noise(RosenbrockId::Rb1);
    let a = v.eval(&[0.3, 0.3], &mut rng).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    fail_if(a != v.eval(&[0.3, 0.3], &mut rng).map_err(|e| e.to_string())?, "Rosenbrock noise differs under the same seed")
}

fn seed_isolation() -> Result<(), String> {
    // Observation noise is the observed value minus the negated noiseless value.
    let noise_of = |r: &wsbo::runner::RunResult, v: &RosenbrockVariant| -> Vec<f64> {
        r.observations().iter().map(|o| o.value + v.value(&o.point).unwrap()).collect()
    };
    let v = RosenbrockVariant::with_default_noise(RosenbrockId::Rb2);
    let mut spec = small_spec("RB2", Algorithm::Kg);
    spec.disc_seed = Some(1);
    let a = run_replication(&spec, 9).map_err(|e| e.to_string())?;
    spec.disc_seed = Some(2);
    let b = run_replication(&spec, 9).map_err(|e| e.to_string())?;
    if a.trace.iter().map(|s| &s.chosen).eq(b.trace.iter().map(|s| &s.chosen)) {
        return Err("discretization seed had no effect".into());
    }
    let (na, nb) = (noise_of(&a, &v), noise_of(&b, &v));
    let close = na.iter().zip(&nb).all(|(x, y)| (x - y).abs() < 1e-9);
    fail_if(!close || a.initial != b.initial, "noise draws depend on the discretization seed")
}

fn ato_accounting() -> Result<(), String> {
    use wsbo::benchmarks::ato::{simulate_replication, LogEntry};
    let cfg = AtoConfig::default_config();
    let levels = [6, 3, 9, 2, 5, 4, 8, 1];
    for rep in 0..5 {
        let mut rng = wsbo::rng::stream(rep, wsbo::rng::SIMULATOR, 0);
        let mut log = Vec::new();
        let out = simulate_replication(&cfg, &levels, &mut rng, Some(&mut log));
        for i in 0..cfg.n_items {
            if out.units_ordered[i] != out.units_consumed[i] {
                return Err(format!("item {i}: {} units ordered for {} consumed", out.units_ordered[i], out.units_consumed[i]));
            }
            if out.initial_stock[i] + out.units_received[i] != out.units_consumed[i] + out.end_stock[i] {
                return Err(format!("item {i}: stock does not balance"));
            }
        }
        // Recompute revenue and holding cost from the log alone.
        let (warm, end) = (cfg.warmup_days, cfg.warmup_days + cfg.horizon_days);
        let revenue: f64 = log
            .iter()
            .filter_map(|e| match e {
                LogEntry::Sale { time, revenue } if *time >= warm => Some(*revenue),
                _ => None,
            })
            .sum();
        let mut holding = 0.0;
        for i in 0..cfg.n_items {
            let mut changes: Vec<(f64, u64)> = log
                .iter()
                .filter_map(|e| match e {
                    LogEntry::Stock { time, item, level } if *item == i => Some((*time, *level)),
                    _ => None,
                })
                .collect();
            changes.push((end, 0));
            for w in changes.windows(2) {
                let (t0, t1) = (w[0].0.max(warm), w[1].0.max(warm));
                holding += cfg.holding_costs[i] * w[0].1 as f64 * (t1 - t0);
            }
        }
        let profit = (revenue - holding) / cfg.horizon_days;
        if (profit - out.daily_profit).abs() > 1e-9 * (1.0 + profit.abs()) {
            return Err(format!("log-based profit {profit} differs from {}", out.daily_profit));
        }
    }
    Ok(())
}

fn shuffled_training_same_posterior() -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(85);
    let hp = random_hyper(&mut rng, 2, 2);
    let obs: Vec<Observation> = random_training(&mut rng, 20, 2, 2, 0.01).observations().to_vec();
    let mut shuffled = obs.clone();
    shuffled.shuffle(&mut rng);
    let a = Posterior::fit(hp.clone(), obs.into()).map_err(|e| e.to_string())?;
    let b = Posterior::fit(hp, shuffled.into()).map_err(|e| e.to_string())?;
    let x = [0.1, -0.4];
    let (ma, va) = a.mean_var(&x).map_err(|e| e.to_string())?;
    let (mb, vb) = b.mean_var(&x).map_err(|e| e.to_string())?;
    fail_if((ma - mb).abs() > 1e-9 || (va - vb).abs() > 1e-9, "posterior depends on training order")
}

pub const INVARIANTS: [(&str, Probe); 10] = [
    ("kernel PSD", kernel_psd),
    ("noiseless interpolation", noiseless_interpolation),
    ("KG/EI nonnegativity", acquisition_nonnegative),
    ("incumbent monotonicity", incumbent_monotone),
    ("acquisition audit", audit_scores),
    ("history round trip", history_round_trip),
    ("deterministic replay", deterministic_replay),
    ("seed isolation", seed_isolation),
    ("ATO accounting", ato_accounting),
    ("training order", shuffled_training_same_posterior),
];

/// All invariant probes; fails when any probe fails or the suite exceeds two minutes.
pub fn invariants() -> Check {
    let start = Instant::now();
    let failures: Vec<String> = INVARIANTS
        .iter()
        .filter_map(|(name, probe)| probe().err().map(|msg| format!("{name}: {msg}")))
        .collect();
    let secs = start.elapsed().as_secs_f64();
    let detail = if failures.is_empty() {
        format!("{} invariant groups hold, {secs:.1}s", INVARIANTS.len())
    } else {
        failures.join("; ")
    };
    Check::new("invariant suites", failures.is_empty() && secs < 120.0, detail)
}
