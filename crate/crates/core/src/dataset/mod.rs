//! Hybrid datasets: a few heavily measured labeled points, many lightly
//! measured unlabeled points, plus validation and test splits.

mod io;

use std::borrow::Cow;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use io::{load_dataset, load_dataset_scoped, save_dataset, write_dataset, read_dataset, FORMAT_VERSION};

use crate::error::{invalid, Error, Result};
use crate::lanczos::ground_state;
use crate::pauli::{build_cluster_ising, build_xxz, HamiltonianSpec, MAX_QUBITS};
use crate::shadows::{exact_label_vector, label_vector, sample_measurements, MeasurementRecord, Task};
use crate::{par, rng};

/// Parameterized family the dataset is drawn from.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemKind {
    /// Alternating Heisenberg chain; `p = [J]` with `J' = 1`.
    Xxz,
    /// Cluster-Ising chain; `p = [h1]` with `h2 = 1`.
    ClusterIsing,
    /// Pauli sum loaded from a file, split into diagonal and off-diagonal
    /// parts: `H(p) = H_diag + p H_offdiag`.
    PauliFile(PathBuf),
}

impl SystemKind {
    pub fn name(&self) -> &'static str {
        match self {
            SystemKind::Xxz => "xxz",
            SystemKind::ClusterIsing => "cluster_ising",
            SystemKind::PauliFile(_) => "pauli_file",
        }
    }
}

impl fmt::Display for SystemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub system: SystemKind,
    pub n_qubits: usize,
    /// Total training points `n = n_l + n_u`.
    pub n: usize,
    /// High-quality ratio `n_l / n`.
    pub r: f64,
    pub m_l: usize,
    pub m_u: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub task: Task,
    /// Open interval the swept parameter ratio is drawn from.
    pub param_range: (f64, f64),
    pub use_params_as_features: bool,
    pub seed: u64,
}

impl DatasetConfig {
    /// Defaults mirroring the 10-qubit XXZ setting, scaled to `n_qubits`.
    pub fn new(system: SystemKind, n_qubits: usize, task: Task) -> Self {
        Self {
            system,
            n_qubits,
            n: 720,
            r: 0.4,
            m_l: 1 << 10,
            m_u: 1 << 6,
            n_val: 120,
            n_test: 120,
            task,
            param_range: (0.0, 2.0),
            use_params_as_features: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r < 1.0) {
            return Err(invalid(format!("high-quality ratio r = {} must lie in (0, 1)", self.r)));
        }
        if !(self.m_l > self.m_u && self.m_u >= 2) {
            return Err(invalid(format!("need m_l > m_u >= 2, got m_l = {}, m_u = {}", self.m_l, self.m_u)));
        }
        if self.n_val < 1 {
            return Err(invalid("n_val must be at least 1"));
        }
        if self.n_test < 1 {
            return Err(invalid("n_test must be at least 1"));
        }
        if self.n_labeled() < 1 {
            return Err(invalid(format!("round(r * n) = 0 for r = {}, n = {}", self.r, self.n)));
        }
        if self.n_qubits < 2 || self.n_qubits > MAX_QUBITS {
            return Err(invalid(format!("N = {} outside 2..={MAX_QUBITS}", self.n_qubits)));
        }
        match self.system {
            SystemKind::Xxz if !self.n_qubits.is_multiple_of(2) => {
                return Err(invalid(format!("XXZ needs an even N, got {}", self.n_qubits)))
            }
            SystemKind::ClusterIsing if self.n_qubits < 3 => {
                return Err(invalid(format!("cluster Ising needs N >= 3, got {}", self.n_qubits)))
            }
            _ => {}
        }
        let (lo, hi) = self.param_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(invalid(format!("empty parameter range ({lo}, {hi})")));
        }
        Ok(())
    }

    pub fn n_labeled(&self) -> usize {
        (self.r * self.n as f64).round() as usize
    }

    pub fn n_unlabeled(&self) -> usize {
        self.n - self.n_labeled().min(self.n)
    }

    /// Hamiltonian for one parameter vector.
    pub fn hamiltonian(&self, params: &[f64]) -> Result<HamiltonianSpec> {
        let p = *params.first().ok_or_else(|| invalid("empty parameter vector"))?;
        match &self.system {
            SystemKind::Xxz => build_xxz(self.n_qubits, p, 1.0),
            SystemKind::ClusterIsing => build_cluster_ising(self.n_qubits, p, 1.0),
            SystemKind::PauliFile(path) => {
                let base = HamiltonianSpec::load_pauli_sum(path)?;
                if base.n_qubits() != self.n_qubits {
                    return Err(invalid(format!(
                        "{} defines {} qubits but the config says {}",
                        path.display(),
                        base.n_qubits(),
                        self.n_qubits
                    )));
                }
                let terms = base
                    .terms()
                    .iter()
                    .map(|t| if t.is_diagonal() { t.clone() } else { t.with_coefficient(p * t.coefficient()) })
                    .collect();
                HamiltonianSpec::new(self.n_qubits, terms, vec![p])
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Split {
    L,
    U,
    #[serde(rename = "val")]
    Val,
    #[serde(rename = "test")]
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::L => "L",
            Split::U => "U",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "L" => Ok(Split::L),
            "U" => Ok(Split::U),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    High,
    Low,
    Unlabeled,
}

/// One `(p, M, o, y)` sample.
#[derive(Clone, Debug, PartialEq)]
pub struct DataPoint {
    pub id: u64,
    pub split: Split,
    pub tier: Tier,
    pub params: Vec<f64>,
    /// Every stored snapshot. Validation points keep the full `m_l` record.
    pub record: MeasurementRecord,
    /// Leading snapshots visible to a model.
    pub visible: usize,
    pub labels: Option<Vec<f64>>,
}

impl DataPoint {
    /// The snapshots a model is allowed to see.
    pub fn input_record(&self) -> Cow<'_, MeasurementRecord> {
        if self.visible == self.record.m() {
            Cow::Borrowed(&self.record)
        } else {
            Cow::Owned(self.record.truncated(self.visible).expect("visible <= m by construction"))
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.record.n_qubits()
    }
}

/// Copy of `pt` keeping only the listed visible snapshot columns (0-based),
/// with labels dropped.
pub fn mask_subset(pt: &DataPoint, indices: &[usize]) -> Result<DataPoint> {
    if indices.is_empty() {
        return Err(invalid("mask must select at least one snapshot"));
    }
    if let Some(&bad) = indices.iter().find(|&&j| j >= pt.visible) {
        return Err(invalid(format!("mask index {bad} beyond the {} visible snapshots", pt.visible)));
    }
    let record = pt.record.select(indices)?;
    Ok(DataPoint {
        id: pt.id,
        split: pt.split,
        tier: Tier::Unlabeled,
        params: pt.params.clone(),
        visible: record.m(),
        record,
        labels: None,
    })
}

/// Which splits a loaded dataset exposes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scope {
    Full,
    /// Test split withheld; asking for it is an error.
    Training,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridDataset {
    pub config: DatasetConfig,
    pub s_l: Vec<DataPoint>,
    pub s_u: Vec<DataPoint>,
    pub s_val: Vec<DataPoint>,
    s_test: Vec<DataPoint>,
    scope: Scope,
}

impl HybridDataset {
    pub fn from_parts(
        config: DatasetConfig,
        s_l: Vec<DataPoint>,
        s_u: Vec<DataPoint>,
        s_val: Vec<DataPoint>,
        s_test: Vec<DataPoint>,
    ) -> Self {
        Self { config, s_l, s_u, s_val, s_test, scope: Scope::Full }
    }

    pub fn scope(&self) -> Scope {
        self.scope
    }

    /// Test points with exact labels; refused in training scope.
    pub fn test_points(&self) -> Result<&[DataPoint]> {
        match self.scope {
            Scope::Full => Ok(&self.s_test),
            Scope::Training => Err(invalid("test split is not accessible in training scope")),
        }
    }

    /// Drop the test split and refuse later access to it.
    pub fn into_training(mut self) -> Self {
        self.s_test.clear();
        self.scope = Scope::Training;
        self
    }

    pub(crate) fn set_scope(&mut self, scope: Scope) {
        self.scope = scope;
    }

    pub(crate) fn raw_test(&self) -> &[DataPoint] {
        &self.s_test
    }

    pub fn points(&self) -> impl Iterator<Item = &DataPoint> {
        self.s_l.iter().chain(&self.s_u).chain(&self.s_val).chain(&self.s_test)
    }
}

/// Uniform i.i.d. draws of the swept ratio from the open `param_range`.
pub fn sample_parameters<R: Rng + ?Sized>(cfg: &DatasetConfig, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let (lo, hi) = cfg.param_range;
    (0..count)
        .map(|_| loop {
            let x = rng.random_range(lo..hi);
            if x > lo {
                break vec![x];
            }
        })
        .collect()
}

fn split_of(cfg: &DatasetConfig, idx: usize) -> Split {
    let n_l = cfg.n_labeled();
    if idx < n_l {
        Split::L
    } else if idx < cfg.n {
        Split::U
    } else if idx < cfg.n + cfg.n_val {
        Split::Val
    } else {
        Split::Test
    }
}

fn build_point(cfg: &DatasetConfig, idx: usize, params: &[f64]) -> Result<DataPoint> {
    let h = cfg.hamiltonian(params)?;
    let gs = ground_state(&h, rng::derive_seed(&[cfg.seed, idx as u64, 0x65])).map_err(|e| match e {
        Error::NumericalFailure(msg) => Error::NumericalFailure(format!("point {idx} with params {params:?}: {msg}")),
        other => other,
    })?;
    let mut r = rng::substream(cfg.seed, idx as u64 + 1);
    let split = split_of(cfg, idx);
    let (m, visible, tier) = match split {
        Split::L => (cfg.m_l, cfg.m_l, Tier::High),
        Split::U => (cfg.m_u, cfg.m_u, Tier::Low),
        Split::Val => (cfg.m_l, cfg.m_u, Tier::Low),
        Split::Test => (cfg.m_u, cfg.m_u, Tier::Low),
    };
    let record = sample_measurements(&gs.state, m, &mut r)?;
    let labels = match split {
        Split::L | Split::Val => Some(label_vector(&record, cfg.task)?),
        Split::U => None,
        Split::Test => Some(exact_label_vector(&gs.state, cfg.task)?),
    };
    Ok(DataPoint { id: idx as u64, split, tier, params: params.to_vec(), record, visible, labels })
}

/// Sample parameters, solve every ground state, and simulate the tiered
/// measurement budgets. Points are built in parallel from per-point
/// generators, so the output is independent of the thread count.
pub fn build_hybrid_dataset(cfg: &DatasetConfig) -> Result<HybridDataset> {
    cfg.validate()?;
    let total = cfg.n + cfg.n_val + cfg.n_test;
    let params = sample_parameters(cfg, total, &mut rng::seeded(cfg.seed));

    let mut sorted: Vec<u64> = params.iter().map(|p| p[0].to_bits()).collect();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::NumericalFailure("duplicate parameter draw across splits".into()));
    }

    let points = par::map_range(total, |idx| build_point(cfg, idx, &params[idx]));
    let mut ds = HybridDataset::from_parts(cfg.clone(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for pt in points {
        let pt = pt?;
        match pt.split {
            Split::L => ds.s_l.push(pt),
            Split::U => ds.s_u.push(pt),
            Split::Val => ds.s_val.push(pt),
            Split::Test => ds.s_test.push(pt),
        }
    }
    Ok(ds)
}
