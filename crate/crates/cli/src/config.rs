//! Run configuration files.
//!
//! Plain `key = value` text in three sections:
//!
//! ```text
//! [dataset]
//! system = xxz
//! N = 8
//! n = 400
//! r = 0.4
//! m_l = 1024
//! m_u = 64
//! task = entropy
//!
//! [learner]
//! hidden = 128,128
//!
//! [engine]
//! T = 6
//! paradigm = sl
//! seeds = 1,2,3
//! ```
//!
//! Keys mirror the fields of the core config types. Unknown sections or keys
//! are rejected so typos do not silently fall back to defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ini::Ini;
use shadowforge_core::dataset::{DatasetConfig, SystemKind};
use shadowforge_core::engine::{ConsistencyConfig, Paradigm};
use shadowforge_core::learner::LearnerConfig;
use shadowforge_core::Task;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub learner: LearnerConfig,
    pub engine: ConsistencyConfig,
    /// Maximum engine iterations.
    pub t_max: usize,
    pub paradigm: Paradigm,
    pub out: PathBuf,
    pub seeds: Vec<u64>,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let cfg = |e: shadowforge_core::Error| CliError::Config(e.to_string());
        self.dataset.validate().map_err(cfg)?;
        self.learner.validate().map_err(cfg)?;
        self.engine.validate().map_err(cfg)?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        Ok(())
    }
}

const DATASET_KEYS: &[&str] = &[
    "system",
    "N",
    "n",
    "r",
    "m_l",
    "m_u",
    "n_val",
    "n_test",
    "task",
    "param_range",
    "use_params_as_features",
    "seed",
    "pauli_file",
];
const LEARNER_KEYS: &[&str] = &[
    "hidden",
    "learning_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "engine_patience",
    "lambda",
    "ema_decay",
    "ridge",
];
const ENGINE_KEYS: &[&str] = &[
    "T",
    "paradigm",
    "s",
    "subset_fraction",
    "admitted_fraction",
    "max_retries",
    "tighten",
    "threshold",
    "seeds",
    "out",
];

/// One section's entries, consumed key by key.
struct Section<'a> {
    name: &'static str,
    entries: BTreeMap<&'a str, &'a str>,
}

impl<'a> Section<'a> {
    fn required<T: FromStr>(&self, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            Some(v) => self.parse(key, v),
            None => Err(CliError::Config(format!("missing required key `{key}` in [{}]", self.name))),
        }
    }

    fn optional<T: FromStr>(&self, key: &str, default: T) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            Some(v) => self.parse(key, v),
            None => Ok(default),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        match self.entries.get(key) {
            Some(v) => parse_list(v).map_err(|e| self.bad(key, v, e)),
            None => Ok(default),
        }
    }

    fn parse<T: FromStr>(&self, key: &str, v: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        v.parse().map_err(|e: T::Err| self.bad(key, v, e.to_string()))
    }

    fn bad(&self, key: &str, v: &str, e: impl std::fmt::Display) -> CliError {
        CliError::Config(format!("bad value {v:?} for `{key}` in [{}]: {e}", self.name))
    }
}

/// Comma-separated values; empty text gives an empty list.
pub fn parse_list<T: FromStr>(text: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e: T::Err| format!("{s:?}: {e}")))
        .collect()
}

fn section<'a>(ini: &'a Ini, name: &'static str, known: &[&str]) -> Result<Section<'a>, CliError> {
    let mut entries = BTreeMap::new();
    if let Some(props) = ini.section(Some(name)) {
        for (k, v) in props.iter() {
            if !known.contains(&k) {
                return Err(CliError::Config(format!("unknown key `{k}` in [{name}]")));
            }
            entries.insert(k, v);
        }
    }
    Ok(Section { name, entries })
}

pub fn parse_config(text: &str) -> Result<RunConfig, CliError> {
    let ini = Ini::load_from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
    for (name, props) in ini.iter() {
        match name {
            Some("dataset" | "learner" | "engine") => {}
            Some(other) => return Err(CliError::Config(format!("unknown section [{other}]"))),
            None if props.is_empty() => {}
            None => return Err(CliError::Config("keys must appear inside a section".into())),
        }
    }
    if ini.section(Some("dataset")).is_none() {
        return Err(CliError::Config("missing required section [dataset]".into()));
    }
    let d = section(&ini, "dataset", DATASET_KEYS)?;
    let l = section(&ini, "learner", LEARNER_KEYS)?;
    let e = section(&ini, "engine", ENGINE_KEYS)?;

    let system = match d.required::<String>("system")?.as_str() {
        "xxz" => SystemKind::Xxz,
        "cluster_ising" => SystemKind::ClusterIsing,
        "pauli_file" => SystemKind::PauliFile(d.required::<PathBuf>("pauli_file")?),
        other => {
            return Err(CliError::Config(format!(
                "unknown system {other:?} in [dataset] (expected xxz, cluster_ising or pauli_file)"
            )))
        }
    };
    let task: Task = d.required("task")?;
    let mut dataset = DatasetConfig::new(system, d.required("N")?, task);
    dataset.n = d.required("n")?;
    dataset.r = d.required("r")?;
    dataset.m_l = d.required("m_l")?;
    dataset.m_u = d.required("m_u")?;
    dataset.n_val = d.optional("n_val", dataset.n_val)?;
    dataset.n_test = d.optional("n_test", dataset.n_test)?;
    dataset.use_params_as_features = d.optional("use_params_as_features", dataset.use_params_as_features)?;
    dataset.seed = d.optional("seed", dataset.seed)?;
    let range: Vec<f64> = d.list("param_range", vec![dataset.param_range.0, dataset.param_range.1])?;
    if range.len() != 2 {
        return Err(CliError::Config("`param_range` in [dataset] needs exactly two values".into()));
    }
    dataset.param_range = (range[0], range[1]);

    let base = LearnerConfig::default();
    let learner = LearnerConfig {
        hidden: l.list("hidden", base.hidden.clone())?,
        learning_rate: l.optional("learning_rate", base.learning_rate)?,
        batch_size: l.optional("batch_size", base.batch_size)?,
        max_epochs: l.optional("max_epochs", base.max_epochs)?,
        patience: l.optional("patience", base.patience)?,
        engine_patience: l.optional("engine_patience", base.engine_patience)?,
        lambda: l.optional("lambda", base.lambda)?,
        ema_decay: l.optional("ema_decay", base.ema_decay)?,
        ridge: l.optional("ridge", base.ridge)?,
        seed: base.seed,
    };

    let cc = ConsistencyConfig::default();
    let threshold = match e.entries.get("threshold") {
        Some(v) if !v.trim().is_empty() && *v != "none" => Some(e.parse("threshold", v)?),
        _ => None,
    };
    let engine = ConsistencyConfig {
        s: e.optional("s", cc.s)?,
        subset_fraction: e.optional("subset_fraction", cc.subset_fraction)?,
        admitted_fraction: e.optional("admitted_fraction", cc.admitted_fraction)?,
        max_retries: e.optional("max_retries", cc.max_retries)?,
        tighten: e.optional("tighten", cc.tighten)?,
        threshold,
    };
    let run = RunConfig {
        dataset,
        learner,
        engine,
        t_max: e.optional("T", 6)?,
        paradigm: e.optional("paradigm", Paradigm::Sl)?,
        out: e.optional("out", PathBuf::from("."))?,
        seeds: e.list("seeds", vec![0])?,
    };
    run.validate()?;
    Ok(run)
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}
