//! `wsbo` command-line driver.
//!
//! Failures print a single line `error: <kind>: <message>` to stderr and exit
//! with status 1 (2 for usage errors).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wsbo::benchmarks::AtoConfig;
use wsbo::hyper::{HyperPrior, MapSettings};
use wsbo::runner::{
    compare, emit_results, fit_hyperparams, load_history, load_hyperparams, merge_histories, replicate, save_history, save_hyperparams,
    Algorithm, ExperimentConfig, HistoryFile, Instance, RunSpec, Truth,
};
use wsbo::{Error, KernelFamily};

#[derive(Parser)]
#[command(name = "wsbo", version, about = "Warm-start Bayesian optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Replicate one algorithm on one instance and write its gain curve.
    Run(RunArgs),
    /// Run several algorithms on shared initial data and write all gain curves.
    Compare(CompareArgs),
    /// Fit hyperparameters on pilot data of an instance plus optional histories.
    Hyperfit(HyperfitArgs),
    /// Run the oracle and property suites.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Common {
    /// RB1..RB4 or ATO1..ATO4.
    #[arg(long)]
    instance: String,
    /// Iterations per run [default: 25 for Rosenbrock, 50 for ATO].
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = ExperimentConfig::DEFAULT_REPLICATIONS)]
    replications: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// History files of previous tasks (WSKG only).
    #[arg(long, num_args = 1..)]
    history: Vec<PathBuf>,
    /// Discretization size [default: 500 for Rosenbrock, 1000 for ATO].
    #[arg(long)]
    disc_size: Option<usize>,
    /// Initial design size [default: 3 for Rosenbrock, 5 for ATO].
    #[arg(long)]
    n_initial: Option<usize>,
    /// Simulation replications behind each true ATO value used for scoring.
    #[arg(long, default_value_t = Truth::DEFAULT_ATO_REPLICATIONS)]
    truth_reps: usize,
    /// ATO model file replacing the shipped default.
    #[arg(long)]
    ato_config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    algorithm: String,
    #[arg(long)]
    hyperparams: PathBuf,
    /// Also save the observations of the first replication as a one-task history.
    #[arg(long)]
    save_history: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    /// Algorithms to compare.
    #[arg(long, value_delimiter = ',', default_values_t = ["WSKG".to_string(), "KG".to_string(), "EGO".to_string()])]
    algorithm: Vec<String>,
    /// Hyperparameters for WSKG, and for the baselines unless --baseline-hyperparams is given.
    #[arg(long)]
    hyperparams: PathBuf,
    #[arg(long)]
    baseline_hyperparams: Option<PathBuf>,
}

#[derive(Args)]
struct HyperfitArgs {
    #[arg(long)]
    instance: String,
    /// Pilot design size on the instance [default: 30 for Rosenbrock, 40 for ATO].
    #[arg(long)]
    pilot: Option<usize>,
    #[arg(long, num_args = 1..)]
    history: Vec<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    restarts: usize,
    /// matern-5/2 or squared-exponential.
    #[arg(long, default_value = "matern-5/2")]
    family: String,
    /// Earlier fits with the same layout; two or more give an empirical prior.
    #[arg(long, num_args = 1..)]
    prior: Vec<PathBuf>,
    #[arg(long)]
    ato_config: Option<PathBuf>,
    /// Output directory; the fit is written to `<out>/<instance>.hyper`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Smaller sample sizes for a quick smoke run.
    #[arg(long)]
    quick: bool,
}

struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::IllConditioned { .. } => "ill-conditioned",
            Error::DegenerateMeasurement => "degenerate-measurement",
            Error::EstimationFailed(_) => "estimation-failed",
            Error::Parse { .. } => "parse",
            Error::Io { .. } => "io",
            Error::Experiment(_) => "experiment",
        };
        Failure {
            kind,
            message: e.to_string(),
            code: 1,
        }
    }
}

type CliResult = Result<(), Failure>;

fn instance(name: &str, ato_config: Option<&Path>) -> Result<Instance, Error> {
    match ato_config {
        Some(path) => Instance::with_ato_base(name, &AtoConfig::load(path)?),
        None => Instance::named(name),
    }
}

fn config(common: &Common, algorithm: Algorithm, hyperparams: &Path) -> Result<ExperimentConfig, Error> {
    let inst = instance(&common.instance, common.ato_config.as_deref())?;
    let mut cfg = ExperimentConfig::new(inst, algorithm, hyperparams);
    if let Some(b) = common.budget {
        cfg.budget = b;
    }
    if let Some(d) = common.disc_size {
        cfg.disc_size = d;
    }
    if let Some(n) = common.n_initial {
        cfg.n_initial = n;
    }
    cfg.replications = common.replications;
    cfg.seed = common.seed;
    if algorithm == Algorithm::Wskg {
        cfg.history_paths = common.history.clone();
    }
    Ok(cfg)
}

fn report_failures(name: &str, failures: &[(usize, String)]) {
    if !failures.is_empty() {
        eprintln!("warning: {name}: {} replications failed and were excluded", failures.len());
    }
}

fn run(args: RunArgs) -> CliResult {
    let algorithm: Algorithm = args.algorithm.parse()?;
    if algorithm != Algorithm::Wskg && !args.common.history.is_empty() {
        return Err(Error::InvalidArgument(format!("{algorithm} takes no --history")).into());
    }
    let cfg = config(&args.common, algorithm, &args.hyperparams)?;
    let spec = cfg.load()?;
    let truth = Truth::new(args.common.truth_reps, Truth::DEFAULT_ATO_SEED)?;
    let outcome = replicate(&spec, cfg.replications, cfg.seed, &truth)?;
    report_failures(algorithm.name(), &outcome.failures);
    let paths = emit_results(std::slice::from_ref(&outcome.curve), &args.common.out)?;
    if let Some(path) = &args.save_history {
        let first = outcome.records.first().ok_or_else(|| Error::Experiment("no successful replication to save".into()))?;
        save_history(&HistoryFile::from_run(&first.result.observations(), 1)?, path)?;
    }
    let c = &outcome.curve;
    println!(
        "{} {} final mean gain {} over {} replications; wrote {}",
        c.instance,
        c.algorithm,
        c.mean.last().copied().unwrap_or(0.0),
        c.n,
        paths[0].display()
    );
    Ok(())
}

fn compare_cmd(args: CompareArgs) -> CliResult {
    let algorithms = args.algorithm.iter().map(|a| a.parse()).collect::<Result<Vec<Algorithm>, Error>>()?;
    if algorithms.is_empty() {
        return Err(Error::InvalidArgument("no algorithms to compare".into()).into());
    }
    if !algorithms.contains(&Algorithm::Wskg) && !args.common.history.is_empty() {
        return Err(Error::InvalidArgument("--history is only used by WSKG".into()).into());
    }
    let mut specs: Vec<RunSpec> = Vec::new();
    for alg in &algorithms {
        let hp = match (alg, &args.baseline_hyperparams) {
            (Algorithm::Kg | Algorithm::Ego, Some(p)) => p.clone(),
            _ => args.hyperparams.clone(),
        };
        let mut spec = config(&args.common, *alg, &hp)?.load()?;
        if *alg != Algorithm::Wskg {
            spec.hyper = spec.hyper.without_deltas();
        }
        specs.push(spec);
    }
    let truth = Truth::new(args.common.truth_reps, Truth::DEFAULT_ATO_SEED)?;
    let outcomes = compare(&specs, args.common.replications, args.common.seed, &truth)?;
    for o in &outcomes {
        report_failures(o.curve.algorithm.name(), &o.failures);
    }
    let curves: Vec<_> = outcomes.iter().map(|o| o.curve.clone()).collect();
    let paths = emit_results(&curves, &args.common.out)?;
    for c in &curves {
        println!("{} {} final mean gain {} over {} replications", c.instance, c.algorithm, c.mean.last().copied().unwrap_or(0.0), c.n);
    }
    println!("wrote {}", paths[0].display());
    Ok(())
}

fn hyperfit(args: HyperfitArgs) -> CliResult {
    let inst = instance(&args.instance, args.ato_config.as_deref())?;
    let family: KernelFamily = args.family.parse()?;
    let files = args.history.iter().map(load_history).collect::<Result<Vec<_>, Error>>()?;
    let history = merge_histories(&files)?;
    let fits = args.prior.iter().map(load_hyperparams).collect::<Result<Vec<_>, Error>>()?;
    let prior = HyperPrior::from_fits(&fits)?;
    let pilot = args.pilot.unwrap_or(match inst.suite() {
        wsbo::runner::Suite::Rosenbrock => 30,
        wsbo::runner::Suite::Ato => 40,
    });
    let settings = MapSettings {
        family,
        n_restarts: args.restarts,
        seed: args.seed,
        ..MapSettings::default()
    };
    let report = fit_hyperparams(&inst, pilot, &history, &prior, &settings)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::Io {
        path: args.out.clone(),
        source: e,
    })?;
    let path = args.out.join(format!("{}.hyper", inst.name()));
    save_hyperparams(&report.best_params, &path)?;
    let converged = report.restarts.iter().filter(|r| r.objective.is_some()).count();
    println!(
        "{} log posterior {} ({converged}/{} restarts converged, {} previous tasks); wrote {}",
        inst,
        report.best_objective,
        report.restarts.len(),
        report.best_params.n_previous(),
        path.display()
    );
    Ok(())
}

fn bench(args: BenchArgs) -> CliResult {
    use wsbo_verify::suites;
    let checks = if args.quick {
        vec![
            suites::gp_oracle(20, 1),
            suites::kg_oracle(10, 100_000, 3, 20_000, 2),
            suites::gradient_oracle(5, 3),
            suites::invariants(),
        ]
    } else {
        wsbo_verify::oracle_suites()
    };
    for c in &checks {
        println!("{}", c.line());
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            kind: "check-failed",
            message: failed.join(", "),
            code: 1,
        })
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let head: Vec<&str> = msg.lines().take_while(|l| !l.starts_with("Usage:")).collect();
            eprintln!("error: usage: {}", one_line(head.join(" ").trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Compare(a) => compare_cmd(a),
        Command::Hyperfit(a) => hyperfit(a),
        Command::Bench(a) => bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}: {}", f.kind, one_line(&f.message));
            ExitCode::from(f.code)
        }
    }
}
