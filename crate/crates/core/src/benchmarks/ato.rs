//! Assemble-to-order inventory system under a continuous-review base-stock
//! policy, simulated event by event.
//!
//! Products arrive as independent Poisson processes. An order is filled only
//! if every key item is on hand in the required quantity; otherwise the
//! customer is lost. Non-key items are added when available. Every consumed
//! unit triggers a one-unit replenishment order with a truncated-normal lead
//! time, so the inventory position of item `i` always equals its base-stock
//! level.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::BoxDomain;
use crate::rng::{self, StreamRng};
use crate::{Error, Result};

/// The default model, as shipped in `data/ato_default.toml`.
pub const DEFAULT_CONFIG_TOML: &str = include_str!("../../data/ato_default.toml");

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantMultipliers {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arrival_rates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profits: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holding_costs: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lead_time_mean: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtoConfig {
    pub n_items: usize,
    pub n_products: usize,
    pub capacity: f64,
    pub horizon_days: f64,
    pub warmup_days: f64,
    pub evaluation_replications: usize,
    pub arrival_rates: Vec<f64>,
    pub profits: Vec<f64>,
    pub holding_costs: Vec<f64>,
    pub lead_time_mean: Vec<f64>,
    pub lead_time_sd: Vec<f64>,
    pub key_items: Vec<Vec<u32>>,
    pub nonkey_items: Vec<Vec<u32>>,
    #[serde(default)]
    pub variants: BTreeMap<String, VariantMultipliers>,
}

impl AtoConfig {
    pub fn default_config() -> Self {
        Self::from_toml(DEFAULT_CONFIG_TOML).expect("shipped ATO config is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: AtoConfig = toml::from_str(text).map_err(|e| Error::invalid(format!("ATO config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn domain(&self) -> BoxDomain {
        BoxDomain::cube(0.0, self.capacity, self.n_items).expect("validated capacity")
    }

    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n_items, self.n_products);
        if n == 0 || m == 0 {
            return Err(Error::invalid("ATO config needs at least one item and one product"));
        }
        let per_item = [
            ("profits", &self.profits),
            ("holding_costs", &self.holding_costs),
            ("lead_time_mean", &self.lead_time_mean),
            ("lead_time_sd", &self.lead_time_sd),
        ];
        for (name, v) in per_item {
            if v.len() != n {
                return Err(Error::invalid(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        if self.arrival_rates.len() != m {
            return Err(Error::invalid(format!("arrival_rates has {} entries, expected {m}", self.arrival_rates.len())));
        }
        if self.arrival_rates.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(Error::invalid("arrival rates must be positive"));
        }
        if self.holding_costs.iter().any(|h| !(*h >= 0.0)) {
            return Err(Error::invalid("holding costs must be nonnegative"));
        }
        if self.profits.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("profits must be finite"));
        }
        if self.lead_time_mean.iter().chain(&self.lead_time_sd).any(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::invalid("lead-time means and sds must be positive"));
        }
        for (name, mat) in [("key_items", &self.key_items), ("nonkey_items", &self.nonkey_items)] {
            if mat.len() != m || mat.iter().any(|row| row.len() != n) {
                return Err(Error::invalid(format!("{name} must be {m} rows of {n} quantities")));
            }
        }
        if let Some(p) = self.key_items.iter().position(|row| row.iter().all(|q| *q == 0)) {
            return Err(Error::invalid(format!("product {p} has no key item")));
        }
        if !(self.capacity > 0.0) || !(self.horizon_days > 0.0) || !(self.warmup_days >= 0.0) {
            return Err(Error::invalid("capacity and horizon must be positive, warmup nonnegative"));
        }
        if self.evaluation_replications < 2 {
            return Err(Error::invalid("evaluation_replications must be at least 2"));
        }
        for (name, v) in &self.variants {
            AtoVariant::from_str(name)?;
            let lens = [
                (&v.arrival_rates, m),
                (&v.profits, n),
                (&v.holding_costs, n),
                (&v.lead_time_mean, n),
            ];
            for (mult, len) in lens {
                if let Some(mult) = mult {
                    if mult.len() != len || mult.iter().any(|x| !(*x > 0.0)) {
                        return Err(Error::invalid(format!("variant {name}: multipliers must be {len} positive numbers")));
                    }
                }
            }
        }
        Ok(())
    }

    /// Integer base-stock levels: targets rounded to the nearest integer.
    pub fn base_stock_levels(&self, targets: &[f64]) -> Result<Vec<u32>> {
        self.domain().check(targets)?;
        Ok(targets.iter().map(|t| t.round() as u32).collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtoVariant {
    Ato1,
    Ato2,
    Ato3,
    Ato4,
}

impl AtoVariant {
    pub const ALL: [AtoVariant; 4] = [AtoVariant::Ato1, AtoVariant::Ato2, AtoVariant::Ato3, AtoVariant::Ato4];
}

impl fmt::Display for AtoVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = *self as u8 + 1;
        write!(f, "ATO{n}")
    }
}

impl FromStr for AtoVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "ATO1" => Ok(AtoVariant::Ato1),
            "ATO2" => Ok(AtoVariant::Ato2),
            "ATO3" => Ok(AtoVariant::Ato3),
            "ATO4" => Ok(AtoVariant::Ato4),
            other => Err(Error::invalid(format!("unknown ATO variant '{other}'"))),
        }
    }
}

fn scale(values: &mut [f64], mult: &Option<Vec<f64>>) {
    if let Some(mult) = mult {
        values.iter_mut().zip(mult).for_each(|(v, m)| *v *= m);
    }
}

/// `base` with the multipliers of `id` applied. ATO1 is the base model itself.
pub fn ato_variant(base: &AtoConfig, id: AtoVariant) -> Result<AtoConfig> {
    let mut cfg = base.clone();
    if id == AtoVariant::Ato1 {
        return Ok(cfg);
    }
    let mult = base
        .variants
        .get(&id.to_string())
        .ok_or_else(|| Error::invalid(format!("config defines no multipliers for {id}")))?;
    scale(&mut cfg.arrival_rates, &mult.arrival_rates);
    scale(&mut cfg.profits, &mult.profits);
    scale(&mut cfg.holding_costs, &mult.holding_costs);
    scale(&mut cfg.lead_time_mean, &mult.lead_time_mean);
    Ok(cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimResult {
    pub mean_daily_profit: f64,
    /// Sample variance of the per-replication daily profit divided by the replication count.
    pub variance_of_mean: f64,
    pub replications: usize,
}

/// Per-replication totals and unit accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationOutcome {
    pub daily_profit: f64,
    /// Revenue of sales in the scored period.
    pub revenue: f64,
    /// Holding cost accrued in the scored period.
    pub holding_cost: f64,
    pub sales: u64,
    pub lost_customers: u64,
    pub initial_stock: Vec<u64>,
    pub end_stock: Vec<u64>,
    pub units_ordered: Vec<u64>,
    pub units_consumed: Vec<u64>,
    pub units_received: Vec<u64>,
}

/// One entry of the optional event log.
#[derive(Clone, Debug, PartialEq)]
pub enum LogEntry {
    /// On-hand stock of `item` became `level` at `time`.
    Stock { time: f64, item: usize, level: u64 },
    /// A product was sold at `time` for `revenue`.
    Sale { time: f64, revenue: f64 },
}

#[derive(Clone, Copy, Debug)]
enum EventKind {
    Arrival(usize),
    Delivery(usize),
}

#[derive(Clone, Copy, Debug)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap pops the earliest event first
    fn cmp(&self, other: &Self) -> Ordering {
        other.time.total_cmp(&self.time).then(other.seq.cmp(&self.seq))
    }
}

struct Inventory<'a> {
    cfg: &'a AtoConfig,
    stock: Vec<u64>,
    last_change: Vec<f64>,
    holding: f64,
    log: Option<&'a mut Vec<LogEntry>>,
}

impl Inventory<'_> {
    /// Accrues holding cost of `item` up to `now`, counting only the scored period.
    fn accrue(&mut self, item: usize, now: f64) {
        let start = self.last_change[item].max(self.cfg.warmup_days);
        if now > start {
            self.holding += self.cfg.holding_costs[item] * self.stock[item] as f64 * (now - start);
        }
        self.last_change[item] = now;
    }

    fn set(&mut self, item: usize, now: f64, level: u64) {
        self.accrue(item, now);
        self.stock[item] = level;
        if let Some(log) = self.log.as_deref_mut() {
            log.push(LogEntry::Stock { time: now, item, level });
        }
    }
}

fn lead_time(cfg: &AtoConfig, item: usize, rng: &mut StreamRng) -> f64 {
    let dist = Normal::new(cfg.lead_time_mean[item], cfg.lead_time_sd[item]).expect("validated lead times");
    loop {
        let t = dist.sample(rng);
        if t > 0.0 {
            return t;
        }
    }
}

/// Simulates one replication with base-stock `levels`, optionally recording every stock change and sale.
pub fn simulate_replication(cfg: &AtoConfig, levels: &[u32], rng: &mut StreamRng, log: Option<&mut Vec<LogEntry>>) -> ReplicationOutcome {
    let n = cfg.n_items;
    let end = cfg.warmup_days + cfg.horizon_days;
    let initial: Vec<u64> = levels.iter().map(|l| *l as u64).collect();
    let mut inv = Inventory {
        cfg,
        stock: initial.clone(),
        last_change: vec![0.0; n],
        holding: 0.0,
        log,
    };
    if let Some(log) = inv.log.as_deref_mut() {
        for (item, level) in initial.iter().enumerate() {
            log.push(LogEntry::Stock { time: 0.0, item, level: *level });
        }
    }
    let mut ordered = vec![0u64; n];
    let mut consumed = vec![0u64; n];
    let mut received = vec![0u64; n];
    let (mut revenue, mut sales, mut lost) = (0.0, 0u64, 0u64);

    let arrivals: Vec<Exp<f64>> = cfg.arrival_rates.iter().map(|r| Exp::new(*r).expect("validated rates")).collect();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (p, dist) in arrivals.iter().enumerate() {
        heap.push(Event {
            time: dist.sample(rng),
            seq,
            kind: EventKind::Arrival(p),
        });
        seq += 1;
    }

    while let Some(ev) = heap.pop() {
        if ev.time >= end {
            break;
        }
        let now = ev.time;
        match ev.kind {
            EventKind::Delivery(item) => {
                received[item] += 1;
                let level = inv.stock[item] + 1;
                inv.set(item, now, level);
            }
            EventKind::Arrival(p) => {
                heap.push(Event {
                    time: now + arrivals[p].sample(rng),
                    seq,
                    kind: EventKind::Arrival(p),
                });
                seq += 1;
                let key = &cfg.key_items[p];
                if key.iter().zip(&inv.stock).any(|(q, s)| (*q as u64) > *s) {
                    lost += 1;
                    continue;
                }
                let mut sale = 0.0;
                for item in 0..n {
                    let used = key[item] as u64 + (cfg.nonkey_items[p][item] as u64).min(inv.stock[item] - key[item] as u64);
                    if used == 0 {
                        continue;
                    }
                    let level = inv.stock[item] - used;
                    inv.set(item, now, level);
                    sale += cfg.profits[item] * used as f64;
                    consumed[item] += used;
                    ordered[item] += used;
                    for _ in 0..used {
                        heap.push(Event {
                            time: now + lead_time(cfg, item, rng),
                            seq,
                            kind: EventKind::Delivery(item),
                        });
                        seq += 1;
                    }
                }
                sales += 1;
                if now >= cfg.warmup_days {
                    revenue += sale;
                }
                if let Some(log) = inv.log.as_deref_mut() {
                    log.push(LogEntry::Sale { time: now, revenue: sale });
                }
            }
        }
    }
    for item in 0..n {
        inv.accrue(item, end);
    }
    let holding = inv.holding;
    ReplicationOutcome {
        daily_profit: (revenue - holding) / cfg.horizon_days,
        revenue,
        holding_cost: holding,
        sales,
        lost_customers: lost,
        initial_stock: initial,
        end_stock: inv.stock,
        units_ordered: ordered,
        units_consumed: consumed,
        units_received: received,
    }
}

/// Mean daily profit of base-stock targets over `replications` independent
/// replications; replication `r` draws from stream `(seed, r)`.
pub fn ato_simulate(cfg: &AtoConfig, targets: &[f64], replications: usize, seed: u64) -> Result<SimResult> {
    if replications < 2 {
        return Err(Error::invalid("at least two replications are needed for a variance estimate"));
    }
    let levels = cfg.base_stock_levels(targets)?;
    let profits: Vec<f64> = (0..replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, rng::SIMULATOR, r);
            simulate_replication(cfg, &levels, &mut rng, None).daily_profit
        })
        .collect();
    let n = replications as f64;
    let mean = profits.iter().sum::<f64>() / n;
    let var = profits.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(SimResult {
        mean_daily_profit: mean,
        variance_of_mean: var / n,
        replications,
    })
}
