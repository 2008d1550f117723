//! Trainers: mini-batch Adam on squared error with early stopping, the
//! mean-teacher variant, and closed-form ridge regression.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::mlp::{Adam, Batch, Mlp};
use super::{KernelModel, LearnerConfig, Model, ModelBody, ModelShape, MlpModel, Sample, Standardizer};
use crate::error::{invalid, Error, Result};
use crate::rng;

/// Smallest ridge strength used by the closed-form solve.
pub const RIDGE_FLOOR: f64 = 1e-10;

const STREAM_INIT: u64 = 1;
const STREAM_SPLIT: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_UNLABELED: u64 = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TrainStats {
    /// Epochs run, not counting the initial evaluation.
    pub epochs: usize,
    /// Epoch whose parameters were kept (0 = the starting point).
    pub best_epoch: usize,
    /// Mean squared error of the returned model over all given samples.
    pub train_loss: f64,
}

fn check_samples(samples: &[Sample], shape: &ModelShape, min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(invalid(format!("need at least {min} training samples, got {}", samples.len())));
    }
    let (d_in, d_out) = (shape.features.dim(), shape.output_dim());
    for (x, y) in samples {
        if x.len() != d_in || y.len() != d_out {
            return Err(invalid(format!(
                "sample of shape ({}, {}), expected ({d_in}, {d_out})",
                x.len(),
                y.len()
            )));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite value in training data"));
        }
    }
    Ok(())
}

/// Early-stop holdout membership. Each key is held out with probability
/// 0.1 under `seed`, independently of the other keys, so a point keeps its
/// role when the training set grows. Both sides are nonempty when there are
/// at least two keys.
pub fn holdout_mask(keys: &[u64], seed: u64) -> Vec<bool> {
    let hashes: Vec<u64> = keys.iter().map(|&k| rng::derive_seed(&[seed, k, STREAM_SPLIT])).collect();
    let cut = (0.1 * u64::MAX as f64) as u64;
    let mut mask: Vec<bool> = hashes.iter().map(|&h| h < cut).collect();
    if keys.len() >= 2 {
        if !mask.iter().any(|&b| b) {
            let i = (0..keys.len()).min_by_key(|&i| hashes[i]).unwrap();
            mask[i] = true;
        } else if mask.iter().all(|&b| b) {
            let i = (0..keys.len()).max_by_key(|&i| hashes[i]).unwrap();
            mask[i] = false;
        }
    }
    mask
}

struct Prepared {
    train_x: Vec<Vec<f64>>,
    train_y: Vec<Vec<f64>>,
    hold_x: Batch,
    hold_y: Batch,
}

fn prepare(samples: &[Sample], keys: &[u64], input: &Standardizer, output: &Standardizer, seed: u64) -> Prepared {
    let mask = holdout_mask(keys, seed);
    let train: Vec<usize> = (0..samples.len()).filter(|&i| !mask[i]).collect();
    let hold: Vec<usize> = (0..samples.len()).filter(|&i| mask[i]).collect();
    let xs = |ids: &[usize]| ids.iter().map(|&i| input.apply(&samples[i].0)).collect::<Vec<_>>();
    let ys = |ids: &[usize]| ids.iter().map(|&i| output.apply(&samples[i].1)).collect::<Vec<_>>();
    let hx = xs(&hold);
    let hy = ys(&hold);
    Prepared {
        train_x: xs(&train),
        train_y: ys(&train),
        hold_x: Batch::from_rows(input.shift.len(), hx.iter().map(Vec::as_slice)),
        hold_y: Batch::from_rows(output.shift.len(), hy.iter().map(Vec::as_slice)),
    }
}

struct Consistency<'a> {
    xs: &'a [Vec<f64>],
    lambda: f64,
    decay: f64,
}

/// Shared epoch loop. Returns the best-holdout parameters.
fn fit(
    net: &Mlp,
    data: &Prepared,
    consistency: Option<Consistency<'_>>,
    cfg: &LearnerConfig,
    patience: usize,
    seed: u64,
) -> Result<(Vec<f64>, usize, usize)> {
    let mut params = net.params.clone();
    let mut opt = Adam::new(params.len(), cfg.learning_rate);
    let mut shuffle = rng::substream(seed, STREAM_SHUFFLE);
    let (d_in, d_out) = (net.d_in(), net.d_out());
    let n_train = data.train_x.len();

    let mut teacher = params.clone();
    let mut unl_rng = rng::substream(seed, STREAM_UNLABELED);
    let mut unl_order: Vec<usize> = Vec::new();
    let mut unl_pos = 0;
    let unl_batch = consistency
        .as_ref()
        .map(|c| ((cfg.batch_size as f64 * c.xs.len() as f64 / n_train as f64).round() as usize).clamp(1, c.xs.len()))
        .unwrap_or(0);

    let holdout = |p: &[f64]| {
        let out = net.forward_with(p, &data.hold_x);
        let n = out.data.len().max(1) as f64;
        out.data.iter().zip(&data.hold_y.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n
    };
    let start = holdout(&params);
    if !start.is_finite() {
        return Err(Error::NumericalFailure("non-finite loss at epoch 0".into()));
    }
    // The starting point competes too, so a warm start never comes back worse.
    let mut best = start;
    let mut best_params = params.clone();
    let mut best_epoch = 0;
    let mut since = 0;
    let mut grad = vec![0.0; params.len()];
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut epochs = 0;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(cfg.batch_size) {
            let bx = Batch::from_rows(d_in, chunk.iter().map(|&i| data.train_x[i].as_slice()));
            let by = Batch::from_rows(d_out, chunk.iter().map(|&i| data.train_y[i].as_slice()));
            grad.iter_mut().for_each(|g| *g = 0.0);
            let loss = net.loss_and_grad(&params, &bx, &by, 1.0, &mut grad);
            if !loss.is_finite() {
                return Err(Error::NumericalFailure(format!("non-finite loss at epoch {epoch}")));
            }
            if let Some(c) = &consistency {
                let mut pick = Vec::with_capacity(unl_batch);
                while pick.len() < unl_batch {
                    if unl_pos == unl_order.len() {
                        unl_order = (0..c.xs.len()).collect();
                        unl_order.shuffle(&mut unl_rng);
                        unl_pos = 0;
                    }
                    pick.push(unl_order[unl_pos]);
                    unl_pos += 1;
                }
                let ux = Batch::from_rows(d_in, pick.iter().map(|&i| c.xs[i].as_slice()));
                let target = net.forward_with(&teacher, &ux);
                let closs = net.loss_and_grad(&params, &ux, &target, c.lambda, &mut grad);
                if !closs.is_finite() {
                    return Err(Error::NumericalFailure(format!("non-finite consistency loss at epoch {epoch}")));
                }
            }
            opt.step(&mut params, &grad);
            if let Some(c) = &consistency {
                for (t, s) in teacher.iter_mut().zip(&params) {
                    *t = c.decay * *t + (1.0 - c.decay) * s;
                }
            }
        }
        let h = holdout(&params);
        if !h.is_finite() {
            return Err(Error::NumericalFailure(format!("non-finite loss at epoch {epoch}")));
        }
        if h < best {
            best = h;
            best_params.clone_from(&params);
            best_epoch = epoch;
            since = 0;
        } else {
            since += 1;
            if since > patience {
                break;
            }
        }
    }
    Ok((best_params, epochs, best_epoch))
}

fn hidden_sizes(d_in: usize, d_out: usize, cfg: &LearnerConfig) -> Vec<usize> {
    let mut sizes = vec![d_in];
    sizes.extend_from_slice(&cfg.hidden);
    sizes.push(d_out);
    sizes
}

fn check_keys(samples: &[Sample], keys: &[u64]) -> Result<()> {
    if keys.len() != samples.len() {
        return Err(invalid(format!("{} keys for {} samples", keys.len(), samples.len())));
    }
    let mut sorted = keys.to_vec();
    sorted.sort_unstable();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        return Err(invalid("sample keys must be unique"));
    }
    Ok(())
}

fn index_keys(n: usize) -> Vec<u64> {
    (0..n as u64).collect()
}

/// Supervised (`unlabeled = None`) or mean-teacher fit where every sample
/// carries a stable key that decides its early-stop role.
pub fn train_keyed(
    samples: &[Sample],
    keys: &[u64],
    unlabeled: Option<&[Vec<f64>]>,
    shape: ModelShape,
    cfg: &LearnerConfig,
) -> Result<(Model, TrainStats)> {
    cfg.validate()?;
    check_samples(samples, &shape, 2)?;
    check_keys(samples, keys)?;
    let (d_in, d_out) = (shape.features.dim(), shape.output_dim());
    let input = Standardizer::center(d_in, samples.iter().map(|s| s.0.as_slice()));
    let output = Standardizer::fit(d_out, samples.iter().map(|s| s.1.as_slice()));
    let net = Mlp::init(hidden_sizes(d_in, d_out, cfg), &mut rng::substream(cfg.seed, STREAM_INIT));
    let data = prepare(samples, keys, &input, &output, cfg.seed);

    let unl_std: Vec<Vec<f64>>;
    let consistency = match unlabeled {
        Some(u) if !u.is_empty() && cfg.lambda > 0.0 => {
            if let Some(bad) = u.iter().find(|x| x.len() != d_in) {
                return Err(invalid(format!("unlabeled feature vector of length {}, expected {d_in}", bad.len())));
            }
            unl_std = u.iter().map(|x| input.apply(x)).collect();
            Some(Consistency { xs: &unl_std, lambda: cfg.lambda, decay: cfg.ema_decay })
        }
        _ => None,
    };
    let (params, epochs, best_epoch) = fit(&net, &data, consistency, cfg, cfg.patience, cfg.seed)?;
    let model = Model {
        shape,
        seed: cfg.seed,
        body: ModelBody::Mlp(MlpModel { net: Mlp { sizes: net.sizes, params }, input, output }),
    };
    let train_loss = model.mse(samples)?;
    Ok((model, TrainStats { epochs, best_epoch, train_loss }))
}

/// Supervised MLP fit on squared error.
pub fn train_sl(samples: &[Sample], shape: ModelShape, cfg: &LearnerConfig) -> Result<(Model, TrainStats)> {
    train_keyed(samples, &index_keys(samples.len()), None, shape, cfg)
}

/// Mean-teacher fit: supervised error plus `lambda` times the squared gap
/// between student and EMA-teacher outputs on unlabeled features. Labeled
/// batches follow exactly the supervised schedule; unlabeled batches are
/// sized to the unlabeled/labeled ratio and drawn from their own stream.
pub fn train_ssl(
    labeled: &[Sample],
    unlabeled: &[Vec<f64>],
    shape: ModelShape,
    cfg: &LearnerConfig,
) -> Result<(Model, TrainStats)> {
    train_keyed(labeled, &index_keys(labeled.len()), Some(unlabeled), shape, cfg)
}

/// Ridge regression with an intercept column, solved in closed form.
pub fn train_kernel(samples: &[Sample], shape: ModelShape, cfg: &LearnerConfig) -> Result<Model> {
    check_samples(samples, &shape, 1)?;
    let (d_in, d_out) = (shape.features.dim(), shape.output_dim());
    let d = d_in + 1;
    let x = DMatrix::from_fn(samples.len(), d, |r, c| if c < d_in { samples[r].0[c] } else { 1.0 });
    let y = DMatrix::from_fn(samples.len(), d_out, |r, c| samples[r].1[c]);
    let ridge = cfg.ridge.max(RIDGE_FLOOR);
    let gram = x.transpose() * &x + DMatrix::identity(d, d) * ridge;
    let rhs = x.transpose() * y;
    let w = match gram.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => gram
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NumericalFailure("ridge system is singular".into()))?,
    };
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("ridge solution is not finite".into()));
    }
    let mut coef = Vec::with_capacity(d * d_out);
    for r in 0..d {
        coef.extend(DVector::from(w.row(r).transpose()).iter());
    }
    Ok(Model { shape, seed: cfg.seed, body: ModelBody::Kernel(KernelModel { d_in, d_out, coef }) })
}

/// Warm-started retraining on a new keyed sample set with the engine-stage
/// patience. The input and output scalings of the starting model are kept,
/// and the early-stop holdout follows the same keyed rule as the initial fit.
/// `seed` drives the batch order. Ridge models are simply refit.
pub fn continue_training(
    model: &Model,
    samples: &[Sample],
    keys: &[u64],
    cfg: &LearnerConfig,
    seed: u64,
) -> Result<(Model, TrainStats)> {
    cfg.validate()?;
    match &model.body {
        ModelBody::Kernel(_) => {
            let refit = train_kernel(samples, model.shape, cfg)?;
            let train_loss = refit.mse(samples)?;
            Ok((refit, TrainStats { epochs: 0, best_epoch: 0, train_loss }))
        }
        ModelBody::Mlp(m) => {
            check_samples(samples, &model.shape, 2)?;
            check_keys(samples, keys)?;
            let data = prepare(samples, keys, &m.input, &m.output, cfg.seed);
            let (params, epochs, best_epoch) = fit(&m.net, &data, None, cfg, cfg.engine_patience, seed)?;
            let out = Model {
                shape: model.shape,
                seed: model.seed,
                body: ModelBody::Mlp(MlpModel {
                    net: Mlp { sizes: m.net.sizes.clone(), params },
                    input: m.input.clone(),
                    output: m.output.clone(),
                }),
            };
            let train_loss = out.mse(samples)?;
            Ok((out, TrainStats { epochs, best_epoch, train_loss }))
        }
    }
}
