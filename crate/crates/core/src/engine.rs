//! Iterative self-labeling with consistency checks and a validation gate.
//!
//! Each iteration scores every remaining low-quality point by how much the
//! current model's prediction moves when only random subsets of its
//! snapshots are shown, admits the most stable ones with the model's own
//! full-record prediction as a frozen label, retrains on the grown set, and
//! keeps the result only if validation R² does not drop. A rejected attempt
//! halves the admitted fraction and retries.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{mask_subset, DataPoint, HybridDataset, Tier};
use crate::error::{invalid, Error, Result};
use crate::learner::{
    continue_training, feature_matrix, labeled_samples, predict, predict_many, r_squared, train_keyed, train_kernel,
    FeatureConfig, LearnerConfig, Model, ModelShape, Sample,
};
use crate::par;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyConfig {
    /// Number of masked subsets per point.
    pub s: usize,
    /// Subset size as a fraction of the visible snapshots.
    pub subset_fraction: f64,
    /// Fraction of candidates admitted, lowest variance first.
    pub admitted_fraction: f64,
    pub max_retries: usize,
    /// Factor applied to the admitted fraction (or threshold) after a
    /// rejected attempt.
    pub tighten: f64,
    /// Absolute variance threshold; when set it replaces the quantile rule.
    pub threshold: Option<f64>,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        ConsistencyConfig {
            s: 5,
            subset_fraction: 0.25,
            admitted_fraction: 0.10,
            max_retries: 3,
            tighten: 0.5,
            threshold: None,
        }
    }
}

impl ConsistencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s < 2 {
            return Err(invalid(format!("need at least 2 subsets, got {}", self.s)));
        }
        if !(self.subset_fraction > 0.0 && self.subset_fraction <= 1.0) {
            return Err(invalid(format!("subset fraction must lie in (0, 1], got {}", self.subset_fraction)));
        }
        if !(self.admitted_fraction > 0.0 && self.admitted_fraction <= 1.0) {
            return Err(invalid(format!("admitted fraction must lie in (0, 1], got {}", self.admitted_fraction)));
        }
        if !(self.tighten > 0.0 && self.tighten < 1.0) {
            return Err(invalid(format!("tighten factor must lie in (0, 1), got {}", self.tighten)));
        }
        if let Some(t) = self.threshold {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid(format!("threshold must be non-negative, got {t}")));
            }
        }
        Ok(())
    }
}

/// Which learner produces the starting model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    Sl,
    Ssl,
    Kernel,
}

impl Paradigm {
    pub fn as_str(self) -> &'static str {
        match self {
            Paradigm::Sl => "sl",
            Paradigm::Ssl => "ssl",
            Paradigm::Kernel => "kernel",
        }
    }
}

impl fmt::Display for Paradigm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Paradigm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sl" => Ok(Paradigm::Sl),
            "ssl" => Ok(Paradigm::Ssl),
            "kernel" => Ok(Paradigm::Kernel),
            other => Err(invalid(format!("unknown paradigm {other:?} (expected sl, ssl or kernel)"))),
        }
    }
}

/// A point in the high-quality set with the label it was admitted with.
#[derive(Clone, Debug, PartialEq)]
pub struct Admitted {
    pub point: DataPoint,
    pub label: Vec<f64>,
    /// 0 for the original labeled points.
    pub iteration: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EngineState {
    pub t: usize,
    pub s_h: Vec<Admitted>,
    pub model: Model,
    /// Validation R² of the baseline and of every accepted iteration.
    pub history: Vec<f64>,
    pub admitted_fraction: f64,
    pub threshold: Option<f64>,
    pub converged: bool,
    /// Training loss of the current model on the current high-quality set.
    pub train_loss: f64,
}

impl EngineState {
    pub fn last_accepted_r2(&self) -> f64 {
        *self.history.last().expect("history starts with the baseline")
    }

    pub fn contains(&self, id: u64) -> bool {
        self.s_h.iter().any(|a| a.point.id == id)
    }
}

/// One row per training attempt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub t: usize,
    pub accepted: bool,
    pub retries: usize,
    pub admitted_count: usize,
    pub admitted_fraction: f64,
    pub val_r2: f64,
    pub train_loss: f64,
    pub wallclock_s: f64,
}

/// Spread of predictions over `s` random snapshot subsets:
/// `(1/s) sum_k |y_k - mean|^2`, together with the mean prediction.
pub fn consistency_variance<R: rand::Rng + ?Sized>(
    model: &Model,
    pt: &DataPoint,
    cc: &ConsistencyConfig,
    rng: &mut R,
) -> Result<(f64, Vec<f64>)> {
    let m = pt.visible;
    if m < cc.s {
        return Err(invalid(format!("point {} has {m} visible snapshots, fewer than s = {}", pt.id, cc.s)));
    }
    let k = ((cc.subset_fraction * m as f64).round() as usize).clamp(1, m);
    let mut preds = Vec::with_capacity(cc.s);
    for _ in 0..cc.s {
        let mut idx = index::sample(rng, m, k).into_vec();
        idx.sort_unstable();
        preds.push(predict(model, &mask_subset(pt, &idx)?)?);
    }
    Ok(spread(&preds))
}

fn spread(preds: &[Vec<f64>]) -> (f64, Vec<f64>) {
    let s = preds.len() as f64;
    let mut mean = vec![0.0; preds[0].len()];
    for p in preds {
        for (a, b) in mean.iter_mut().zip(p) {
            *a += b;
        }
    }
    mean.iter_mut().for_each(|a| *a /= s);
    let var = preds.iter().map(|p| p.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>() / s;
    (var, mean)
}

/// A candidate's consistency score.
#[derive(Clone, Debug, PartialEq)]
pub struct Scored {
    pub index: usize,
    pub id: u64,
    pub variance: f64,
}

/// Scores all candidates, sorted by ascending variance then id. Each
/// candidate draws its subsets from a generator keyed by `seed` and its id.
pub fn score_candidates(model: &Model, candidates: &[DataPoint], cc: &ConsistencyConfig, seed: u64) -> Result<Vec<Scored>> {
    let scores: Vec<Result<Scored>> = par::map_range(candidates.len(), |i| {
        let pt = &candidates[i];
        let mut r = rng::substream(seed, pt.id);
        let (variance, _) = consistency_variance(model, pt, cc, &mut r)?;
        Ok(Scored { index: i, id: pt.id, variance })
    });
    let mut scores = scores.into_iter().collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| a.variance.total_cmp(&b.variance).then(a.id.cmp(&b.id)));
    Ok(scores)
}

/// How many of the sorted candidates pass selection.
fn admitted_count(sorted: &[Scored], fraction: f64, threshold: Option<f64>) -> usize {
    match threshold {
        Some(tau) => sorted.iter().take_while(|s| s.variance.partial_cmp(&tau) == Some(Ordering::Less)).count(),
        None => ((fraction * sorted.len() as f64).ceil() as usize).min(sorted.len()),
    }
}

fn admit(model: &Model, candidates: &[DataPoint], chosen: &[Scored]) -> Result<Vec<(DataPoint, Vec<f64>)>> {
    par::map_slice(chosen, |s| {
        let pt = &candidates[s.index];
        Ok((pt.clone(), predict(model, pt)?))
    })
    .into_iter()
    .collect()
}

/// Lowest-variance `ceil(fraction * |candidates|)` points (or those under
/// the absolute threshold), each with its full-record prediction as label.
pub fn select_high_quality(
    model: &Model,
    candidates: &[DataPoint],
    cc: &ConsistencyConfig,
    seed: u64,
) -> Result<Vec<(DataPoint, Vec<f64>)>> {
    if candidates.is_empty() {
        return Err(invalid("no candidates to select from"));
    }
    let sorted = score_candidates(model, candidates, cc, seed)?;
    let n = admitted_count(&sorted, cc.admitted_fraction, cc.threshold);
    admit(model, candidates, &sorted[..n])
}

fn samples_of(s_h: &[Admitted], features: &FeatureConfig) -> Result<Vec<Sample>> {
    par::map_slice(s_h, |a| Ok((crate::learner::featurize(&a.point, features)?, a.label.clone())))
        .into_iter()
        .collect()
}

/// Warm-started training on every point of the high-quality set.
pub fn retrain(model: &Model, s_h: &[Admitted], lc: &LearnerConfig, seed: u64) -> Result<(Model, f64)> {
    if s_h.len() < 2 {
        return Err(invalid("retraining needs at least two points"));
    }
    let samples = samples_of(s_h, &model.shape.features)?;
    let keys: Vec<u64> = s_h.iter().map(|a| a.point.id).collect();
    let (next, stats) = continue_training(model, &samples, &keys, lc, seed)?;
    Ok((next, stats.train_loss))
}

/// R² on validation points, from their truncated records against their
/// shadow-estimated labels.
pub fn validate(model: &Model, s_val: &[DataPoint]) -> Result<f64> {
    if s_val.is_empty() {
        return Err(invalid("validation set is empty"));
    }
    let truths: Vec<Vec<f64>> = s_val
        .iter()
        .map(|p| p.labels.clone().ok_or_else(|| invalid(format!("validation point {} has no labels", p.id))))
        .collect::<Result<_>>()?;
    r_squared(&predict_many(model, s_val)?, &truths)
}

fn iteration_seed(lc: &LearnerConfig, t: usize, attempt: usize) -> u64 {
    rng::derive_seed(&[lc.seed, t as u64, attempt as u64, 0x454e47])
}

/// One select / retrain / validate round. Returns the next state and one
/// report row per attempt. On failure the input state is untouched.
pub fn engine_iteration(
    state: &EngineState,
    pool: &[DataPoint],
    s_val: &[DataPoint],
    cc: &ConsistencyConfig,
    lc: &LearnerConfig,
) -> Result<(EngineState, Vec<ReportRow>)> {
    let started = Instant::now();
    let mut next = state.clone();
    next.admitted_fraction = cc.admitted_fraction;
    next.threshold = cc.threshold;
    let remaining: Vec<DataPoint> = pool.iter().filter(|p| !state.contains(p.id)).cloned().collect();
    let previous = state.last_accepted_r2();

    if remaining.is_empty() {
        next.t += 1;
        let row = ReportRow {
            t: next.t,
            accepted: false,
            retries: 0,
            admitted_count: 0,
            admitted_fraction: next.admitted_fraction,
            val_r2: previous,
            train_loss: state.train_loss,
            wallclock_s: started.elapsed().as_secs_f64(),
        };
        return Ok((next, vec![row]));
    }

    let sorted = score_candidates(&state.model, &remaining, cc, iteration_seed(lc, state.t, usize::MAX))?;
    let mut rows = Vec::new();
    for attempt in 0..=cc.max_retries {
        let n = admitted_count(&sorted, next.admitted_fraction, next.threshold);
        let chosen = admit(&state.model, &remaining, &sorted[..n])?;
        let mut s_h = state.s_h.clone();
        s_h.extend(chosen.into_iter().map(|(mut point, label)| {
            point.tier = Tier::Low;
            Admitted { point, label, iteration: state.t + 1 }
        }));
        let (model, train_loss) = retrain(&state.model, &s_h, lc, iteration_seed(lc, state.t, attempt))?;
        let val_r2 = validate(&model, s_val)?;
        let accepted = val_r2 >= previous;
        rows.push(ReportRow {
            t: state.t + 1,
            accepted,
            retries: attempt,
            admitted_count: n,
            admitted_fraction: next.admitted_fraction,
            val_r2,
            train_loss,
            wallclock_s: started.elapsed().as_secs_f64(),
        });
        if accepted {
            next.t += 1;
            next.s_h = s_h;
            next.model = model;
            next.train_loss = train_loss;
            next.history.push(val_r2);
            next.admitted_fraction = cc.admitted_fraction;
            next.threshold = cc.threshold;
            return Ok((next, rows));
        }
        next.admitted_fraction *= cc.tighten;
        next.threshold = next.threshold.map(|t| t * cc.tighten);
    }
    next.t += 1;
    next.converged = true;
    Ok((next, rows))
}

/// Final model, state and per-attempt report of a full run. `failure` holds
/// the error that stopped the loop early, if any; the state then reflects
/// the last accepted iteration.
#[derive(Clone, Debug)]
pub struct EngineRun {
    pub baseline: Model,
    pub state: EngineState,
    pub report: Vec<ReportRow>,
    pub failure: Option<String>,
}

impl EngineRun {
    pub fn model(&self) -> &Model {
        &self.state.model
    }
}

pub fn model_shape(ds: &HybridDataset) -> Result<ModelShape> {
    let n_params = ds.s_l.first().map(|p| p.params.len()).ok_or_else(|| invalid("dataset has no labeled points"))?;
    Ok(ModelShape {
        task: ds.config.task,
        features: FeatureConfig {
            n_qubits: ds.config.n_qubits,
            n_params,
            use_params: ds.config.use_params_as_features,
        },
    })
}

/// Train the starting model with the chosen paradigm.
pub fn train_baseline(ds: &HybridDataset, lc: &LearnerConfig, paradigm: Paradigm) -> Result<(Model, f64)> {
    let shape = model_shape(ds)?;
    let samples = labeled_samples(&ds.s_l, &shape.features)?;
    let keys: Vec<u64> = ds.s_l.iter().map(|p| p.id).collect();
    match paradigm {
        Paradigm::Sl => train_keyed(&samples, &keys, None, shape, lc).map(|(m, s)| (m, s.train_loss)),
        Paradigm::Ssl => {
            let unl = feature_matrix(&ds.s_u, &shape.features)?;
            train_keyed(&samples, &keys, Some(&unl), shape, lc).map(|(m, s)| (m, s.train_loss))
        }
        Paradigm::Kernel => {
            let m = train_kernel(&samples, shape, lc)?;
            let loss = m.mse(&samples)?;
            Ok((m, loss))
        }
    }
}

/// Baseline fit followed by up to `t_max` engine iterations.
pub fn run_engine(
    ds: &HybridDataset,
    t_max: usize,
    cc: &ConsistencyConfig,
    lc: &LearnerConfig,
    paradigm: Paradigm,
) -> Result<EngineRun> {
    cc.validate()?;
    lc.validate()?;
    let started = Instant::now();
    let (baseline, train_loss) = train_baseline(ds, lc, paradigm)?;
    let val_r2 = validate(&baseline, &ds.s_val)?;
    let s_h = ds
        .s_l
        .iter()
        .map(|p| {
            let label = p.labels.clone().ok_or_else(|| invalid(format!("labeled point {} has no labels", p.id)))?;
            Ok(Admitted { point: p.clone(), label, iteration: 0 })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut state = EngineState {
        t: 0,
        s_h,
        model: baseline.clone(),
        history: vec![val_r2],
        admitted_fraction: cc.admitted_fraction,
        threshold: cc.threshold,
        converged: false,
        train_loss,
    };
    let mut report = vec![ReportRow {
        t: 0,
        accepted: true,
        retries: 0,
        admitted_count: 0,
        admitted_fraction: cc.admitted_fraction,
        val_r2,
        train_loss,
        wallclock_s: started.elapsed().as_secs_f64(),
    }];
    let mut failure = None;
    while state.t < t_max && !state.converged {
        match engine_iteration(&state, &ds.s_u, &ds.s_val, cc, lc) {
            Ok((next, rows)) => {
                state = next;
                report.extend(rows);
            }
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        }
    }
    Ok(EngineRun { baseline, state, report, failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{build_hybrid_dataset, DatasetConfig, SystemKind};
    use crate::learner::{KernelModel, ModelBody};
    use crate::shadows::Task;

    fn small_ds() -> HybridDataset {
        let cfg = DatasetConfig {
            n: 40,
            r: 0.5,
            m_l: 128,
            m_u: 32,
            n_val: 12,
            n_test: 6,
            seed: 5,
            ..DatasetConfig::new(SystemKind::Xxz, 4, Task::CorrZ)
        };
        build_hybrid_dataset(&cfg).unwrap()
    }

    fn small_lc() -> LearnerConfig {
        LearnerConfig { hidden: vec![16], max_epochs: 60, patience: 20, engine_patience: 10, seed: 2, ..LearnerConfig::default() }
    }

    fn constant_model(ds: &HybridDataset, c: f64) -> Model {
        let shape = model_shape(ds).unwrap();
        let d_in = shape.features.dim();
        let d_out = shape.output_dim();
        let mut coef = vec![0.0; (d_in + 1) * d_out];
        coef[d_in * d_out..].iter_mut().for_each(|v| *v = c);
        Model { shape, seed: 0, body: ModelBody::Kernel(KernelModel { d_in, d_out, coef }) }
    }

    #[test]
    fn constant_model_has_zero_variance() {
        let ds = small_ds();
        let model = constant_model(&ds, 0.3);
        let mut r = rng::seeded(1);
        for pt in &ds.s_u {
            let (v, mean) = consistency_variance(&model, pt, &ConsistencyConfig::default(), &mut r).unwrap();
            assert_eq!(v, 0.0);
            assert!(mean.iter().all(|&x| (x - 0.3).abs() < 1e-15));
        }
    }

    #[test]
    fn identical_subsets_have_zero_variance() {
        let preds = vec![vec![0.1, -0.4, 0.9]; 2];
        assert_eq!(spread(&preds).0, 0.0);
        assert!((spread(&[vec![0.0], vec![2.0]]).0 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_snapshots_rejected() {
        let ds = small_ds();
        let model = constant_model(&ds, 0.0);
        let cc = ConsistencyConfig { s: 64, ..ConsistencyConfig::default() };
        assert!(consistency_variance(&model, &ds.s_u[0], &cc, &mut rng::seeded(0)).is_err());
    }

    #[test]
    fn selection_counts_and_ties() {
        let ds = small_ds();
        let model = constant_model(&ds, 0.0);
        let all = ConsistencyConfig { admitted_fraction: 1.0, ..ConsistencyConfig::default() };
        assert_eq!(select_high_quality(&model, &ds.s_u, &all, 0).unwrap().len(), ds.s_u.len());

        let mut pool = Vec::new();
        for k in 0..100u64 {
            let mut p = ds.s_u[k as usize % ds.s_u.len()].clone();
            p.id = 1000 - k;
            pool.push(p);
        }
        let tenth = select_high_quality(&model, &pool, &ConsistencyConfig::default(), 0).unwrap();
        assert_eq!(tenth.len(), 10);
        // All variances tie at zero, so the lowest ids win.
        let ids: Vec<u64> = tenth.iter().map(|(p, _)| p.id).collect();
        assert_eq!(ids, (901..=910).collect::<Vec<_>>());
    }

    #[test]
    fn threshold_mode_admits_below_tau() {
        let ds = small_ds();
        let model = constant_model(&ds, 0.0);
        let cc = ConsistencyConfig { threshold: Some(0.0), ..ConsistencyConfig::default() };
        assert!(select_high_quality(&model, &ds.s_u, &cc, 0).unwrap().is_empty());
        let cc = ConsistencyConfig { threshold: Some(1e-9), ..cc };
        assert_eq!(select_high_quality(&model, &ds.s_u, &cc, 0).unwrap().len(), ds.s_u.len());
    }

    #[test]
    fn zero_iterations_return_the_baseline() {
        let ds = small_ds();
        let run = run_engine(&ds, 0, &ConsistencyConfig::default(), &small_lc(), Paradigm::Sl).unwrap();
        assert_eq!(run.report.len(), 1);
        assert_eq!(run.report[0].t, 0);
        assert_eq!(run.state.model, run.baseline);
        assert_eq!(run.state.s_h.len(), ds.s_l.len());
    }

    #[test]
    fn run_invariants_and_determinism() {
        let ds = small_ds();
        let cc = ConsistencyConfig::default();
        let run = run_engine(&ds, 3, &cc, &small_lc(), Paradigm::Sl).unwrap();
        assert!(run.failure.is_none());
        assert!(run.state.history.windows(2).all(|w| w[0] <= w[1]));
        let mut ids: Vec<u64> = run.state.s_h.iter().map(|a| a.point.id).collect();
        ids.sort_unstable();
        assert!(ids.windows(2).all(|w| w[0] < w[1]));
        let u_ids: Vec<u64> = ds.s_u.iter().map(|p| p.id).collect();
        for a in run.state.s_h.iter().filter(|a| a.iteration > 0) {
            assert!(u_ids.contains(&a.point.id));
        }
        for a in run.state.s_h.iter().filter(|a| a.iteration == 0) {
            assert_eq!(Some(&a.label), a.point.labels.as_ref());
        }
        let again = run_engine(&ds, 3, &cc, &small_lc(), Paradigm::Sl).unwrap();
        let strip = |r: &[ReportRow]| r.iter().map(|x| ReportRow { wallclock_s: 0.0, ..x.clone() }).collect::<Vec<_>>();
        assert_eq!(strip(&run.report), strip(&again.report));
        assert_eq!(run.state.model, again.state.model);
    }

    #[test]
    fn empty_pool_is_a_no_op() {
        let ds = small_ds();
        let lc = small_lc();
        let (model, _) = train_baseline(&ds, &lc, Paradigm::Kernel).unwrap();
        let state = EngineState {
            t: 2,
            s_h: Vec::new(),
            model,
            history: vec![0.5],
            admitted_fraction: 0.1,
            threshold: None,
            converged: false,
            train_loss: 0.25,
        };
        let (next, rows) = engine_iteration(&state, &[], &ds.s_val, &ConsistencyConfig::default(), &lc).unwrap();
        assert_eq!(next.t, 3);
        assert_eq!(EngineState { t: 2, ..next }, state);
        assert_eq!(rows.len(), 1);
        assert!(!rows[0].accepted);
    }

    #[test]
    fn rejected_attempt_halves_the_fraction() {
        let ds = small_ds();
        let lc = small_lc();
        let (model, _) = train_baseline(&ds, &lc, Paradigm::Sl).unwrap();
        let s_h = ds.s_l.iter().map(|p| Admitted { point: p.clone(), label: p.labels.clone().unwrap(), iteration: 0 }).collect();
        // An unreachable bar forces every attempt to fail.
        let state = EngineState {
            t: 0,
            s_h,
            model: model.clone(),
            history: vec![2.0],
            admitted_fraction: 0.4,
            threshold: None,
            converged: false,
            train_loss: 0.25,
        };
        let cc = ConsistencyConfig { admitted_fraction: 0.4, max_retries: 2, ..ConsistencyConfig::default() };
        let (next, rows) = engine_iteration(&state, &ds.s_u, &ds.s_val, &cc, &lc).unwrap();
        let fractions: Vec<f64> = rows.iter().map(|r| r.admitted_fraction).collect();
        assert_eq!(fractions, vec![0.4, 0.2, 0.1]);
        assert!(rows.iter().all(|r| !r.accepted));
        assert!(next.converged);
        assert_eq!(next.model, model);
        assert_eq!(next.s_h.len(), ds.s_l.len());
    }

    #[test]
    fn constant_model_cannot_beat_the_mean_predictor() {
        let ds = small_ds();
        let model = constant_model(&ds, 0.0);
        assert!(validate(&model, &ds.s_val).unwrap() <= 1e-12);
    }

    #[test]
    fn paradigm_names() {
        for p in [Paradigm::Sl, Paradigm::Ssl, Paradigm::Kernel] {
            assert_eq!(p.as_str().parse::<Paradigm>().unwrap(), p);
        }
        assert!("transformer".parse::<Paradigm>().is_err());
    }
}
