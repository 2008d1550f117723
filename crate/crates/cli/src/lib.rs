//! Command implementations behind the `shadowforge` binary.
//!
//! Every command returns a [`CliError`] instead of exiting, so the binary
//! owns the mapping to exit codes: 0 success, 2 usage or config problems,
//! 3 numerical or engine failures.

pub mod config;
pub mod table;

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use shadowforge_core::dataset::{build_hybrid_dataset, load_dataset_scoped, write_dataset, DataPoint, HybridDataset, Scope};
use shadowforge_core::engine::{run_engine, EngineRun, Paradigm, ReportRow};
use shadowforge_core::learner::{load_model, per_output_r_squared, predict_many, r_squared, write_model, Model};
use shadowforge_core::shadows::purity_variance_bound;
use shadowforge_core::{par, Error, Task};
use thiserror::Error;

pub use config::{load_config, parse_config, RunConfig};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "SHADOWFORGE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("engine failure: {0}")]
    Engine(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Engine(_) => 3,
            CliError::Core(e) => match e {
                Error::NumericalFailure(_) | Error::UndefinedMetric(_) => 3,
                Error::InvalidArgument(_) | Error::Parse { .. } | Error::Version { .. } | Error::Io(_) => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Thread cap from [`THREADS_ENV`]; unset or empty means no cap.
pub fn thread_cap() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if v.trim().is_empty() => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(k) if k > 0 => Ok(Some(k)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Write `bytes` to a temporary file next to `path`, then rename it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    std::fs::create_dir_all(&dir).map_err(Error::Io)?;
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(Error::Io)?;
    tmp.write_all(bytes).map_err(Error::Io)?;
    tmp.as_file().sync_all().map_err(Error::Io)?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Io(e.into()))?;
    out.push(b'\n');
    Ok(out)
}

// ---------------------------------------------------------------- gen

#[derive(Clone, Debug)]
pub struct GenSummary {
    pub path: PathBuf,
    pub counts: [usize; 4],
    pub warnings: Vec<String>,
}

/// Purity standard-deviation bound above which `gen` warns about a label.
pub const LABEL_SD_WARN: f64 = 0.1;

/// Warnings for entropy labels whose purity estimate has a loose variance
/// bound at `m_l`. Only subsystems of at most `N/2` qubits are estimated.
pub fn label_warnings(cfg: &shadowforge_core::dataset::DatasetConfig) -> Vec<String> {
    if cfg.task != Task::Entropy {
        return Vec::new();
    }
    (1..=cfg.n_qubits / 2)
        .filter_map(|k| {
            let sd = purity_variance_bound(cfg.m_l, k, 1.0).sqrt();
            (sd > LABEL_SD_WARN).then(|| {
                format!("purity labels on {k} qubits at m_l = {} have a standard-deviation bound of {sd:.3}", cfg.m_l)
            })
        })
        .collect()
}

pub fn cmd_gen(cfg: &RunConfig, path: &Path) -> CliResult<GenSummary> {
    let ds = par::with_threads(thread_cap()?, || build_hybrid_dataset(&cfg.dataset))?;
    let mut bytes = Vec::new();
    write_dataset(&ds, &mut bytes)?;
    write_atomic(path, &bytes)?;
    Ok(GenSummary {
        path: path.to_path_buf(),
        counts: [ds.s_l.len(), ds.s_u.len(), ds.s_val.len(), ds.test_points()?.len()],
        warnings: label_warnings(&cfg.dataset),
    })
}

// ---------------------------------------------------------------- run

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub system: String,
    pub task: Task,
    #[serde(rename = "N")]
    pub n_qubits: usize,
    pub n: usize,
    pub r: f64,
    pub m_l: usize,
    pub m_u: usize,
    pub paradigm: Paradigm,
    pub seed: u64,
    pub t_max: usize,
    pub baseline_val_r2: f64,
    pub engine_val_r2: f64,
    pub baseline_test_r2: f64,
    pub engine_test_r2: f64,
    pub delta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Points admitted beyond the original labeled set.
    pub admitted: usize,
    pub failure: Option<String>,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub seeds: Vec<u64>,
    pub baseline_test_r2: MeanStd,
    pub engine_test_r2: MeanStd,
    pub delta: MeanStd,
    /// Seeds where the engine model scored at least the baseline on test.
    pub engine_not_worse: usize,
    pub failed_seeds: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub reports: Vec<SeedReport>,
    pub aggregate: Option<Aggregate>,
    /// Seeds whose run stopped on an error, with the message.
    pub failures: Vec<(u64, String)>,
}

pub fn model_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("model_seed{seed}.json"))
}

pub fn baseline_model_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("baseline_seed{seed}.json"))
}

pub fn report_path(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("report_seed{seed}.json"))
}

pub fn aggregate_path(out: &Path) -> PathBuf {
    out.join("aggregate.json")
}

fn test_r2(model: &Model, test: &[DataPoint]) -> CliResult<f64> {
    let preds = predict_many(model, test)?;
    Ok(r_squared(&preds, &labels_of(test)?)?)
}

fn labels_of(points: &[DataPoint]) -> CliResult<Vec<Vec<f64>>> {
    points
        .iter()
        .map(|p| p.labels.clone().ok_or_else(|| CliError::Core(Error::InvalidArgument(format!("point {} has no labels", p.id)))))
        .collect()
}

fn model_bytes(model: &Model) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    write_model(model, &mut out)?;
    Ok(out)
}

/// Engine runs for every seed, then test scoring and file output.
///
/// Training sees the dataset in training scope only; the test split is read
/// afterwards, once all engine runs have finished. `timing = false` zeroes
/// the wall-clock column so repeated runs produce identical files.
pub fn cmd_run(cfg: &RunConfig, dataset: &Path, out: &Path, timing: bool) -> CliResult<RunOutcome> {
    let train = load_dataset_scoped(dataset, Scope::Training)?;
    check_dataset(cfg, &train)?;
    let threads = thread_cap()?;
    let runs: Vec<(u64, shadowforge_core::Result<EngineRun>)> = par::with_threads(threads, || {
        par::map_slice(&cfg.seeds, |&seed| {
            let mut lc = cfg.learner.clone();
            lc.seed = seed;
            (seed, run_engine(&train, cfg.t_max, &cfg.engine, &lc, cfg.paradigm))
        })
    });
    drop(train);

    let full = load_dataset_scoped(dataset, Scope::Full)?;
    let test = full.test_points()?;
    let dc = &full.config;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, run) in runs {
        let run = match run {
            Ok(r) => r,
            Err(e) => {
                failures.push((seed, e.to_string()));
                continue;
            }
        };
        let mut rows = run.report.clone();
        if !timing {
            rows.iter_mut().for_each(|r| r.wallclock_s = 0.0);
        }
        let baseline_test_r2 = test_r2(&run.baseline, test)?;
        let engine_test_r2 = test_r2(run.model(), test)?;
        let report = SeedReport {
            system: dc.system.name().to_string(),
            task: dc.task,
            n_qubits: dc.n_qubits,
            n: dc.n,
            r: dc.r,
            m_l: dc.m_l,
            m_u: dc.m_u,
            paradigm: cfg.paradigm,
            seed,
            t_max: cfg.t_max,
            baseline_val_r2: run.report[0].val_r2,
            engine_val_r2: run.state.last_accepted_r2(),
            baseline_test_r2,
            engine_test_r2,
            delta: engine_test_r2 - baseline_test_r2,
            iterations: run.state.t,
            converged: run.state.converged,
            admitted: run.state.s_h.iter().filter(|a| a.iteration > 0).count(),
            failure: run.failure.clone(),
            rows,
        };
        write_atomic(&baseline_model_path(out, seed), &model_bytes(&run.baseline)?)?;
        write_atomic(&model_path(out, seed), &model_bytes(run.model())?)?;
        write_atomic(&report_path(out, seed), &json_bytes(&report)?)?;
        if let Some(msg) = &run.failure {
            failures.push((seed, msg.clone()));
        }
        reports.push(report);
    }

    let aggregate = (!reports.is_empty()).then(|| {
        let pick = |f: fn(&SeedReport) -> f64| reports.iter().map(f).collect::<Vec<_>>();
        let mut failed: Vec<u64> = failures.iter().map(|f| f.0).collect();
        failed.sort_unstable();
        Aggregate {
            seeds: reports.iter().map(|r| r.seed).collect(),
            baseline_test_r2: MeanStd::of(&pick(|r| r.baseline_test_r2)),
            engine_test_r2: MeanStd::of(&pick(|r| r.engine_test_r2)),
            delta: MeanStd::of(&pick(|r| r.delta)),
            engine_not_worse: reports.iter().filter(|r| r.delta >= 0.0).count(),
            failed_seeds: failed,
        }
    });
    if let Some(agg) = &aggregate {
        write_atomic(&aggregate_path(out), &json_bytes(agg)?)?;
    }
    Ok(RunOutcome { reports, aggregate, failures })
}

fn check_dataset(cfg: &RunConfig, ds: &HybridDataset) -> CliResult<()> {
    let (a, b) = (&cfg.dataset, &ds.config);
    if a.n_qubits != b.n_qubits || a.task != b.task {
        return Err(CliError::Config(format!(
            "config describes N = {} / {} but the dataset holds N = {} / {}",
            a.n_qubits, a.task, b.n_qubits, b.task
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- eval

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    /// The labeled training points.
    Train,
    Val,
    Test,
}

impl std::str::FromStr for EvalSplit {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(EvalSplit::Train),
            "val" => Ok(EvalSplit::Val),
            "test" => Ok(EvalSplit::Test),
            other => Err(format!("unknown split {other:?} (expected train, val or test)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub r2: f64,
    /// One entry per output; `null` where the truth column is constant.
    pub per_prefix_r2: Vec<Option<f64>>,
    pub n_points: usize,
}

pub fn evaluate(model: &Model, points: &[DataPoint]) -> CliResult<EvalMetrics> {
    let preds = predict_many(model, points)?;
    let truths = labels_of(points)?;
    let r2 = r_squared(&preds, &truths)?;
    let width = truths.first().map_or(0, Vec::len);
    let per_prefix_r2 = (0..width)
        .map(|k| {
            let col = |v: &[Vec<f64>]| v.iter().map(|x| vec![x[k]]).collect::<Vec<_>>();
            match per_output_r_squared(&col(&preds), &col(&truths)) {
                Ok(v) => Ok(Some(v[0])),
                Err(Error::UndefinedMetric(_)) => Ok(None),
                Err(e) => Err(CliError::Core(e)),
            }
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(EvalMetrics { r2, per_prefix_r2, n_points: points.len() })
}

pub fn cmd_eval(model: &Path, dataset: &Path, split: EvalSplit) -> CliResult<EvalMetrics> {
    let model = load_model(model)?;
    let ds = load_dataset_scoped(dataset, Scope::Full)?;
    let f = &model.shape.features;
    if f.n_qubits != ds.config.n_qubits || model.shape.task != ds.config.task {
        return Err(CliError::Config(format!(
            "model was trained for N = {} / {} but the dataset holds N = {} / {}",
            f.n_qubits, model.shape.task, ds.config.n_qubits, ds.config.task
        )));
    }
    let points = match split {
        EvalSplit::Train => &ds.s_l[..],
        EvalSplit::Val => &ds.s_val[..],
        EvalSplit::Test => ds.test_points()?,
    };
    par::with_threads(thread_cap()?, || evaluate(&model, points))
}

pub fn metrics_json(m: &EvalMetrics) -> CliResult<String> {
    Ok(String::from_utf8(json_bytes(m)?).expect("serde_json emits UTF-8"))
}

// ---------------------------------------------------------------- table

pub fn cmd_table(pattern: &str) -> CliResult<String> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| CliError::Usage(format!("bad glob {pattern:?}: {e}")))?
        .filter_map(std::result::Result::ok)
        .collect();
    if paths.is_empty() {
        return Err(CliError::Usage(format!("no report files match {pattern:?}")));
    }
    let mut reports = Vec::with_capacity(paths.len());
    for p in &paths {
        let text = std::fs::read_to_string(p).map_err(Error::Io)?;
        let r: SeedReport = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { line: e.line(), message: format!("{}: {e}", p.display()) })?;
        reports.push(r);
    }
    Ok(table::render(&reports))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Engine("x".into()).exit_code(), 3);
        assert_eq!(CliError::Core(Error::NumericalFailure("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(Error::Version { found: 2, expected: 1 }).exit_code(), 2);
    }

    #[test]
    fn mean_std() {
        let s = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    #[test]
    fn warnings_only_for_loose_entropy_bounds() {
        use shadowforge_core::dataset::{DatasetConfig, SystemKind};
        let mut c = DatasetConfig::new(SystemKind::Xxz, 8, Task::Entropy);
        c.m_l = 1 << 10;
        // sd bound: 0.088 on one qubit, 0.125 on two, larger beyond.
        let w = label_warnings(&c);
        assert_eq!(w.len(), 3);
        assert!(w[0].contains("on 2 qubits"), "{}", w[0]);
        c.task = Task::CorrZ;
        assert!(label_warnings(&c).is_empty());
    }
}
