//! The optimization loops, history and hyperparameter files, and the
//! replication harness producing gain curves.

pub mod experiment;
pub mod history;
pub mod hyperfile;
pub mod instance;
pub mod run;

pub use experiment::{
    compare, emit_results, fit_hyperparams, gains, pilot_observations, read_results, replicate, ExperimentConfig, ExperimentOutcome, GainCurve,
    ReplicationRecord,
};
pub use history::{load_history, merge_histories, save_history, HistoryFile};
pub use hyperfile::{format_hyperparams, load_hyperparams, parse_hyperparams, save_hyperparams};
pub use instance::{Instance, Suite, Truth};
pub use run::{discretization, run_baseline, run_replication, run_wskg, Algorithm, RunResult, RunSpec, TraceStep};
