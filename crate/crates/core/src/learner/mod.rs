//! Shadow-frequency features and lightweight regressors.
//!
//! A data point becomes a vector of per-qubit frequencies of the six
//! `(basis, bit)` outcomes, optionally followed by the Hamiltonian parameters.
//! Three trainers share one [`Model`] type: a supervised MLP, a mean-teacher
//! semi-supervised MLP, and closed-form ridge regression.

mod mlp;
mod train;

use std::io::{Read, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::dataset::DataPoint;
use crate::error::{invalid, Error, Result};
use crate::par;
use crate::shadows::Task;

pub use mlp::{param_count, Adam, Batch, Mlp};
pub use train::{continue_training, holdout_mask, train_keyed, train_kernel, train_sl, train_ssl, TrainStats};

/// Six `(basis, bit)` combinations per qubit.
pub const OUTCOMES_PER_QUBIT: usize = 6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Early-stop patience for the initial fit.
    pub patience: usize,
    /// Early-stop patience when retraining inside the engine.
    pub engine_patience: usize,
    /// Consistency weight (semi-supervised only).
    pub lambda: f64,
    pub ema_decay: f64,
    pub ridge: f64,
    pub seed: u64,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig {
            hidden: vec![128, 128],
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 300,
            patience: 100,
            engine_patience: 30,
            lambda: 1.0,
            ema_decay: 0.99,
            ridge: 1e-6,
            seed: 0,
        }
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer widths must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(invalid("batch size and max epochs must be positive"));
        }
        if self.patience > self.max_epochs || self.engine_patience > self.max_epochs {
            return Err(invalid("patience cannot exceed max epochs"));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("consistency weight must be non-negative, got {}", self.lambda)));
        }
        if !(self.ema_decay > 0.0 && self.ema_decay < 1.0) {
            return Err(invalid(format!("EMA decay must lie in (0, 1), got {}", self.ema_decay)));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(invalid(format!("ridge must be non-negative, got {}", self.ridge)));
        }
        Ok(())
    }
}

/// How data points map to feature vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub n_qubits: usize,
    pub n_params: usize,
    pub use_params: bool,
}

impl FeatureConfig {
    pub fn dim(&self) -> usize {
        OUTCOMES_PER_QUBIT * self.n_qubits + if self.use_params { self.n_params } else { 0 }
    }
}

/// Feature layout plus the task whose label vectors the model predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub task: Task,
    pub features: FeatureConfig,
}

impl ModelShape {
    pub fn output_dim(&self) -> usize {
        self.features.n_qubits - 1
    }
}

/// Per-qubit outcome frequencies over the visible snapshots, then `p`.
pub fn featurize(pt: &DataPoint, cfg: &FeatureConfig) -> Result<Vec<f64>> {
    let rec = pt.input_record();
    let n = rec.n_qubits();
    if n != cfg.n_qubits {
        return Err(invalid(format!("point has {n} qubits, features expect {}", cfg.n_qubits)));
    }
    if cfg.use_params && pt.params.len() != cfg.n_params {
        return Err(invalid(format!("point has {} parameters, features expect {}", pt.params.len(), cfg.n_params)));
    }
    let m = rec.m();
    if m == 0 {
        return Err(invalid("cannot featurize a record without snapshots"));
    }
    let mut counts = vec![0u32; OUTCOMES_PER_QUBIT * n];
    for snap in rec.codes().chunks_exact(n) {
        for (q, &c) in snap.iter().enumerate() {
            counts[q * OUTCOMES_PER_QUBIT + c as usize] += 1;
        }
    }
    let inv = 1.0 / m as f64;
    let mut out: Vec<f64> = counts.into_iter().map(|c| f64::from(c) * inv).collect();
    if cfg.use_params {
        out.extend_from_slice(&pt.params);
    }
    Ok(out)
}

/// A feature vector and its label vector.
pub type Sample = (Vec<f64>, Vec<f64>);

/// Features and labels of labeled points; unlabeled points are an error.
pub fn labeled_samples(points: &[DataPoint], features: &FeatureConfig) -> Result<Vec<Sample>> {
    par::map_slice(points, |pt| {
        let y = pt.labels.clone().ok_or_else(|| invalid(format!("point {} has no labels", pt.id)))?;
        Ok((featurize(pt, features)?, y))
    })
    .into_iter()
    .collect()
}

pub fn feature_matrix(points: &[DataPoint], features: &FeatureConfig) -> Result<Vec<Vec<f64>>> {
    par::map_slice(points, |pt| featurize(pt, features)).into_iter().collect()
}

/// Per-column affine map `(v - shift) / scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Standardizer {
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Column means and standard deviations; near-constant columns keep
    /// unit scale.
    pub fn fit<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let count = rows.clone().count().max(1) as f64;
        let mut shift = vec![0.0; dim];
        for r in rows.clone() {
            for (s, v) in shift.iter_mut().zip(r) {
                *s += v;
            }
        }
        shift.iter_mut().for_each(|s| *s /= count);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((s, v), mu) in var.iter_mut().zip(r).zip(&shift) {
                *s += (v - mu) * (v - mu);
            }
        }
        let scale = var.into_iter().map(|v| (v / count).sqrt()).map(|s| if s > 1e-8 { s } else { 1.0 }).collect();
        Standardizer { shift, scale }
    }

    /// Column means with unit scale.
    pub fn center<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let mut s = Self::fit(dim, rows);
        s.scale.iter_mut().for_each(|v| *v = 1.0);
        s
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter().zip(&self.shift).zip(&self.scale).map(|((x, m), s)| x * s + m).collect()
    }
}

/// MLP operating on standardized inputs and outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub net: Mlp,
    pub input: Standardizer,
    pub output: Standardizer,
}

/// Linear map with intercept: `y = [x, 1] W`, `W` stored row-major
/// `(d_in + 1) x d_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelModel {
    pub d_in: usize,
    pub d_out: usize,
    pub coef: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelBody {
    Mlp(MlpModel),
    Kernel(KernelModel),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub shape: ModelShape,
    pub seed: u64,
    pub body: ModelBody,
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self.body {
            ModelBody::Mlp(_) => "mlp",
            ModelBody::Kernel(_) => "kernel",
        }
    }

    /// Unclamped outputs for a batch of raw feature vectors.
    pub fn predict_features(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let d_in = self.shape.features.dim();
        if let Some(bad) = xs.iter().find(|x| x.len() != d_in) {
            return Err(invalid(format!("feature vector of length {}, model expects {d_in}", bad.len())));
        }
        Ok(match &self.body {
            ModelBody::Mlp(m) => {
                let z: Vec<Vec<f64>> = xs.iter().map(|x| m.input.apply(x)).collect();
                let batch = Batch::from_rows(d_in, z.iter().map(Vec::as_slice));
                let out = m.net.forward(&batch);
                (0..out.rows()).map(|r| m.output.invert(out.row(r))).collect()
            }
            ModelBody::Kernel(k) => xs
                .iter()
                .map(|x| {
                    let mut y = k.coef[k.d_in * k.d_out..].to_vec();
                    for (i, xi) in x.iter().enumerate() {
                        for (o, yo) in y.iter_mut().enumerate() {
                            *yo += xi * k.coef[i * k.d_out + o];
                        }
                    }
                    y
                })
                .collect(),
        })
    }

    /// Mean squared error of unclamped outputs over samples.
    pub fn mse(&self, samples: &[Sample]) -> Result<f64> {
        let xs: Vec<Vec<f64>> = samples.iter().map(|s| s.0.clone()).collect();
        let preds = self.predict_features(&xs)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (p, (_, y)) in preds.iter().zip(samples) {
            for (a, b) in p.iter().zip(y) {
                total += (a - b) * (a - b);
                count += 1;
            }
        }
        Ok(total / count.max(1) as f64)
    }

    fn clamp(&self, mut y: Vec<f64>) -> Vec<f64> {
        let (lo, hi) = match self.shape.task {
            Task::Entropy => (0.0, (self.shape.features.n_qubits - 1) as f64),
            Task::CorrX | Task::CorrZ => (-1.0, 1.0),
        };
        y.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
        y
    }
}

/// Label-vector prediction for one point, clamped to the task's range.
pub fn predict(model: &Model, pt: &DataPoint) -> Result<Vec<f64>> {
    let x = featurize(pt, &model.shape.features)?;
    let y = model.predict_features(std::slice::from_ref(&x))?.pop().unwrap();
    Ok(model.clamp(y))
}

/// [`predict`] over many points, in order.
pub fn predict_many(model: &Model, points: &[DataPoint]) -> Result<Vec<Vec<f64>>> {
    par::map_slice(points, |pt| predict(model, pt)).into_iter().collect()
}

/// `1 - SS_res / SS_tot` over all entries of all vectors.
pub fn r_squared(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    if preds.len() != truths.len() {
        return Err(invalid(format!("{} predictions for {} truths", preds.len(), truths.len())));
    }
    if truths.len() < 2 {
        return Err(invalid("R² needs at least two points"));
    }
    if preds.iter().zip(truths).any(|(p, t)| p.len() != t.len()) {
        return Err(invalid("prediction and truth vectors differ in length"));
    }
    let count = truths.iter().map(Vec::len).sum::<usize>() as f64;
    let mean = truths.iter().flatten().sum::<f64>() / count;
    let ss_tot: f64 = truths.iter().flatten().map(|t| (t - mean) * (t - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("all truth values are identical".into()));
    }
    let ss_res: f64 = preds.iter().flatten().zip(truths.iter().flatten()).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// R² of each output column separately.
pub fn per_output_r_squared(preds: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<Vec<f64>> {
    let width = truths.first().map_or(0, Vec::len);
    (0..width)
        .map(|k| {
            let p: Vec<Vec<f64>> = preds.iter().map(|v| vec![v[k]]).collect();
            let t: Vec<Vec<f64>> = truths.iter().map(|v| vec![v[k]]).collect();
            r_squared(&p, &t)
        })
        .collect()
}

pub const MODEL_FORMAT_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u64,
    kind: String,
    /// Layer widths (mlp) or `[d_in, d_out]` (kernel).
    dims: Vec<usize>,
    shape: ModelShape,
    seed: u64,
    /// Little-endian f64 values, base64 encoded.
    blob: String,
}

fn encode_f64s(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64s(text: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(text).map_err(|e| Error::Parse { line: 1, message: format!("bad parameter blob: {e}") })?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse { line: 1, message: "parameter blob is not a whole number of f64 values".into() });
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn write_model<W: Write>(model: &Model, mut out: W) -> Result<()> {
    let (dims, values) = match &model.body {
        ModelBody::Mlp(m) => {
            let mut v = m.net.params.clone();
            for s in [&m.input, &m.output] {
                v.extend_from_slice(&s.shift);
                v.extend_from_slice(&s.scale);
            }
            (m.net.sizes.clone(), v)
        }
        ModelBody::Kernel(k) => (vec![k.d_in, k.d_out], k.coef.clone()),
    };
    let file = ModelFile {
        version: MODEL_FORMAT_VERSION,
        kind: model.kind().to_string(),
        dims,
        shape: model.shape,
        seed: model.seed,
        blob: encode_f64s(&values),
    };
    serde_json::to_writer(&mut out, &file).map_err(|e| Error::Io(e.into()))?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(input: R) -> Result<Model> {
    let perr = |message: String| Error::Parse { line: 1, message };
    let raw: serde_json::Value = serde_json::from_reader(input).map_err(|e| perr(e.to_string()))?;
    let version = raw.get("version").and_then(serde_json::Value::as_u64).ok_or_else(|| perr("model file has no version".into()))?;
    if version != MODEL_FORMAT_VERSION {
        return Err(Error::Version { found: version, expected: MODEL_FORMAT_VERSION });
    }
    let file: ModelFile = serde_json::from_value(raw).map_err(|e| perr(e.to_string()))?;
    let values = decode_f64s(&file.blob)?;
    let d_in = file.shape.features.dim();
    let d_out = file.shape.output_dim();
    let body = match file.kind.as_str() {
        "mlp" => {
            let sizes = file.dims;
            if sizes.len() < 2 || sizes[0] != d_in || sizes[sizes.len() - 1] != d_out {
                return Err(perr(format!("layer widths {sizes:?} do not match the feature/output shape")));
            }
            let np = param_count(&sizes);
            if values.len() != np + 2 * d_in + 2 * d_out {
                return Err(perr(format!("blob holds {} values, expected {}", values.len(), np + 2 * d_in + 2 * d_out)));
            }
            let (params, rest) = values.split_at(np);
            let (x_shift, rest) = rest.split_at(d_in);
            let (x_scale, rest) = rest.split_at(d_in);
            let (y_shift, y_scale) = rest.split_at(d_out);
            ModelBody::Mlp(MlpModel {
                net: Mlp { sizes, params: params.to_vec() },
                input: Standardizer { shift: x_shift.to_vec(), scale: x_scale.to_vec() },
                output: Standardizer { shift: y_shift.to_vec(), scale: y_scale.to_vec() },
            })
        }
        "kernel" => {
            if file.dims != [d_in, d_out] || values.len() != (d_in + 1) * d_out {
                return Err(perr("kernel dimensions do not match the blob".into()));
            }
            ModelBody::Kernel(KernelModel { d_in, d_out, coef: values })
        }
        other => return Err(perr(format!("unknown model kind {other:?}"))),
    };
    Ok(Model { shape: file.shape, seed: file.seed, body })
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_model(model, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    read_model(std::fs::File::open(path)?)
}
