//! Benchmark instances as seen by the optimization loop: a box domain, a
//! noisy evaluator on task 0, and the noiseless value used for scoring.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use crate::benchmarks::{ato_simulate, ato_variant, AtoConfig, AtoVariant, RosenbrockId, RosenbrockVariant};
use crate::design::BoxDomain;
use crate::gp::Observation;
use crate::rng::StreamRng;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Rosenbrock,
    Ato,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Instance {
    Rosenbrock(RosenbrockVariant),
    Ato { variant: AtoVariant, config: Arc<AtoConfig> },
}

impl Instance {
    /// `RB1`..`RB4` with the default noise or `ATO1`..`ATO4` on the shipped model.
    pub fn named(name: &str) -> Result<Self> {
        Self::with_ato_base(name, &AtoConfig::default_config())
    }

    /// Like [`Instance::named`], deriving ATO variants from `base`.
    pub fn with_ato_base(name: &str, base: &AtoConfig) -> Result<Self> {
        if let Ok(id) = RosenbrockId::from_str(name) {
            return Ok(Instance::Rosenbrock(RosenbrockVariant::with_default_noise(id)));
        }
        if let Ok(variant) = AtoVariant::from_str(name) {
            let config = Arc::new(ato_variant(base, variant)?);
            return Ok(Instance::Ato { variant, config });
        }
        Err(Error::invalid(format!("unknown instance '{name}' (expected RB1..RB4 or ATO1..ATO4)")))
    }

    pub fn suite(&self) -> Suite {
        match self {
            Instance::Rosenbrock(_) => Suite::Rosenbrock,
            Instance::Ato { .. } => Suite::Ato,
        }
    }

    pub fn name(&self) -> String {
        match self {
            Instance::Rosenbrock(v) => v.id.to_string(),
            Instance::Ato { variant, .. } => variant.to_string(),
        }
    }

    pub fn domain(&self) -> BoxDomain {
        match self {
            Instance::Rosenbrock(_) => RosenbrockVariant::domain(),
            Instance::Ato { config, .. } => config.domain(),
        }
    }

    pub fn dim(&self) -> usize {
        self.domain().dim()
    }

    pub fn default_budget(&self) -> usize {
        match self.suite() {
            Suite::Rosenbrock => 25,
            Suite::Ato => 50,
        }
    }

    pub fn default_n_initial(&self) -> usize {
        match self.suite() {
            Suite::Rosenbrock => 3,
            Suite::Ato => 5,
        }
    }

    pub fn default_disc_size(&self) -> usize {
        match self.suite() {
            Suite::Rosenbrock => 500,
            Suite::Ato => 1000,
        }
    }

    /// One noisy evaluation on task 0. Rosenbrock noise is drawn from
    /// `noise`; the ATO simulator runs on its own stream seeded by `sim_seed`.
    pub fn evaluate(&self, x: &[f64], sim_seed: u64, noise: &mut StreamRng) -> Result<Observation> {
        match self {
            Instance::Rosenbrock(v) => v.eval(x, noise),
            Instance::Ato { config, .. } => {
                let r = ato_simulate(config, x, config.evaluation_replications, sim_seed)?;
                Observation::new(0, x.to_vec(), r.mean_daily_profit, r.variance_of_mean)
            }
        }
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// Scores evaluated points without observation noise: the negated Rosenbrock
/// value, or a high-replication ATO estimate on a fixed common seed.
/// ATO estimates are cached by base-stock levels.
#[derive(Debug)]
pub struct Truth {
    ato_replications: usize,
    ato_seed: u64,
    cache: Mutex<HashMap<(String, Vec<u32>), f64>>,
}

impl Truth {
    pub const DEFAULT_ATO_REPLICATIONS: usize = 10_000;
    pub const DEFAULT_ATO_SEED: u64 = 0x5eed_7a11;

    pub fn new(ato_replications: usize, ato_seed: u64) -> Result<Self> {
        if ato_replications < 2 {
            return Err(Error::invalid("true values need at least two replications"));
        }
        Ok(Self {
            ato_replications,
            ato_seed,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn ato_replications(&self) -> usize {
        self.ato_replications
    }

    pub fn value(&self, instance: &Instance, x: &[f64]) -> Result<f64> {
        match instance {
            Instance::Rosenbrock(v) => Ok(-v.value(x)?),
            Instance::Ato { config, .. } => {
                let key = (instance.name(), config.base_stock_levels(x)?);
                if let Some(v) = self.cache.lock().unwrap().get(&key) {
                    return Ok(*v);
                }
                let v = ato_simulate(config, x, self.ato_replications, self.ato_seed)?.mean_daily_profit;
                self.cache.lock().unwrap().insert(key, v);
                Ok(v)
            }
        }
    }
}

impl Default for Truth {
    fn default() -> Self {
        Self::new(Self::DEFAULT_ATO_REPLICATIONS, Self::DEFAULT_ATO_SEED).expect("valid defaults")
    }
}
