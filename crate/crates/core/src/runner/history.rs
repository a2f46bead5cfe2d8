//! Flat-file persistence of previous runs.
//!
//! ```text
//! # d=2 m=1
//! 1,0.25,-1.5,-3.2109375,0.25
//! ```
//!
//! Every record is `task,x_1,..,x_d,y,noise_var`. Values are written in the
//! shortest form that parses back to the identical `f64`.

use std::fmt::Write as _;
use std::path::Path;

use crate::gp::{Observation, TrainingSet};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HistoryFile {
    dim: usize,
    records: Vec<Observation>,
}

impl HistoryFile {
    /// Records must share one dimension, belong to tasks `>= 1` and have nonnegative noise.
    pub fn new(dim: usize, records: Vec<Observation>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.point.len() != dim {
                return Err(Error::invalid(format!("record {i} has dimension {}, expected {dim}", r.point.len())));
            }
            if r.task == 0 {
                return Err(Error::invalid(format!("record {i} belongs to task 0; history holds previous tasks only")));
            }
        }
        if dim == 0 && !records.is_empty() {
            return Err(Error::invalid("records need at least one coordinate"));
        }
        Ok(Self { dim, records })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    /// The current-task observations of a finished run, relabelled as task `task`.
    pub fn from_run(observations: &[Observation], task: usize) -> Result<Self> {
        let dim = observations.first().map_or(0, |o| o.point.len());
        let records = observations
            .iter()
            .map(|o| Observation {
                task,
                ..o.clone()
            })
            .collect();
        Self::new(dim, records)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[Observation] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Largest task id, 0 for an empty history.
    pub fn max_task(&self) -> usize {
        self.records.iter().map(|r| r.task).max().unwrap_or(0)
    }

    pub fn training(&self) -> TrainingSet {
        self.records.clone().into()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# d={} m={}\n", self.dim, self.max_task());
        for r in &self.records {
            write!(out, "{}", r.task).unwrap();
            for v in r.point.iter().chain([&r.value, &r.noise_var]) {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut dim: Option<usize> = None;
        let mut declared_m: Option<(usize, usize)> = None;
        let mut records = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if records.is_empty() && dim.is_none() {
                    let (d, m) = parse_header(rest).map_err(|m| err(lineno, m))?;
                    dim = Some(d);
                    declared_m = Some((m, lineno));
                }
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let d = *dim.get_or_insert(fields.len().saturating_sub(3));
            if d == 0 || fields.len() != d + 3 {
                return Err(err(lineno, format!("row has {} fields, expected {} (task, {d} coordinates, y, noise_var)", fields.len(), d + 3)));
            }
            let task: usize = fields[0]
                .parse()
                .map_err(|_| err(lineno, format!("task id '{}' is not a nonnegative integer", fields[0])))?;
            let mut nums = Vec::with_capacity(d + 2);
            for f in &fields[1..] {
                nums.push(f.parse::<f64>().map_err(|_| err(lineno, format!("'{f}' is not a number")))?);
            }
            let noise_var = nums.pop().unwrap();
            let value = nums.pop().unwrap();
            if task == 0 {
                return Err(err(lineno, "task 0 is the current task and cannot be preloaded".into()));
            }
            let obs = Observation::new(task, nums, value, noise_var).map_err(|e| err(lineno, e.to_string()))?;
            records.push(obs);
        }
        let history = Self {
            dim: dim.unwrap_or(0),
            records,
        };
        if let Some((m, lineno)) = declared_m {
            if !history.is_empty() && m != history.max_task() {
                return Err(err(lineno, format!("header declares m={m} but the largest task id is {}", history.max_task())));
            }
        }
        Ok(history)
    }
}

fn parse_header(rest: &str) -> std::result::Result<(usize, usize), String> {
    let (mut d, mut m) = (None, None);
    for tok in rest.split_whitespace() {
        let (key, value) = tok.split_once('=').ok_or_else(|| format!("bad header token '{tok}'"))?;
        let value: usize = value.parse().map_err(|_| format!("header value '{value}' is not an integer"))?;
        match key {
            "d" => d = Some(value),
            "m" => m = Some(value),
            _ => return Err(format!("unknown header key '{key}'")),
        }
    }
    match (d, m) {
        (Some(d), Some(m)) => Ok((d, m)),
        _ => Err("header must be '# d=<dim> m=<max_task>'".into()),
    }
}

pub fn load_history(path: impl AsRef<Path>) -> Result<HistoryFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    HistoryFile::parse(&text, path)
}

pub fn save_history(history: &HistoryFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history.to_text()).map_err(|e| Error::io(path, e))
}

/// Concatenates histories into one, renumbering tasks to `1..=M` in the order
/// (file, original task id).
pub fn merge_histories(files: &[HistoryFile]) -> Result<HistoryFile> {
    let nonempty: Vec<&HistoryFile> = files.iter().filter(|h| !h.is_empty()).collect();
    let dim = nonempty.first().map_or(0, |h| h.dim);
    if let Some(h) = nonempty.iter().find(|h| h.dim != dim) {
        return Err(Error::invalid(format!("history dimensions differ: {dim} and {}", h.dim)));
    }
    let mut next = 1;
    let mut records = Vec::new();
    for h in nonempty {
        let mut ids: Vec<usize> = h.records.iter().map(|r| r.task).collect();
        ids.sort_unstable();
        ids.dedup();
        for r in &h.records {
            let rank = ids.binary_search(&r.task).expect("id collected above");
            records.push(Observation {
                task: next + rank,
                ..r.clone()
            });
        }
        next += ids.len();
    }
    HistoryFile::new(dim, records)
}
