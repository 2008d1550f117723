//! Fully connected tanh network over a flat parameter vector, plus Adam.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Layer widths `[d_in, h_1, ..., d_out]`. Parameters are stored layer by
/// layer as a row-major `out x in` weight block followed by `out` biases.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub sizes: Vec<usize>,
    pub params: Vec<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Row-major batch of vectors with a fixed width.
#[derive(Clone, Debug, Default)]
pub struct Batch {
    pub width: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn from_rows<'a>(width: usize, rows: impl IntoIterator<Item = &'a [f64]>) -> Self {
        let mut data = Vec::new();
        for r in rows {
            debug_assert_eq!(r.len(), width);
            data.extend_from_slice(r);
        }
        Batch { width, data }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.width).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(sizes: Vec<usize>, rng: &mut R) -> Self {
        let mut params = Vec::with_capacity(param_count(&sizes));
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-limit..limit));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp { sizes, params }
    }

    pub fn d_in(&self) -> usize {
        self.sizes[0]
    }

    pub fn d_out(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    /// Offsets of each layer's weight block in `params`.
    fn offsets(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers());
        let mut at = 0;
        for w in self.sizes.windows(2) {
            out.push(at);
            at += w[0] * w[1] + w[1];
        }
        out
    }

    /// Activations of every layer for a batch; the first entry is the input.
    fn forward_all(&self, params: &[f64], x: &Batch) -> Vec<Batch> {
        let rows = x.rows();
        let offsets = self.offsets();
        let mut acts = vec![x.clone()];
        for l in 0..self.layers() {
            let (d_in, d_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &params[offsets[l]..offsets[l] + d_in * d_out];
            let b = &params[offsets[l] + d_in * d_out..offsets[l] + d_in * d_out + d_out];
            let prev = acts.last().unwrap();
            let mut next = vec![0.0; rows * d_out];
            let hidden = l + 1 < self.layers();
            for r in 0..rows {
                let xin = prev.row(r);
                let out = &mut next[r * d_out..(r + 1) * d_out];
                for (o, slot) in out.iter_mut().enumerate() {
                    let wrow = &w[o * d_in..(o + 1) * d_in];
                    let mut s = b[o];
                    for (wi, xi) in wrow.iter().zip(xin) {
                        s += wi * xi;
                    }
                    *slot = if hidden { s.tanh() } else { s };
                }
            }
            acts.push(Batch { width: d_out, data: next });
        }
        acts
    }

    pub fn forward_with(&self, params: &[f64], x: &Batch) -> Batch {
        self.forward_all(params, x).pop().unwrap()
    }

    pub fn forward(&self, x: &Batch) -> Batch {
        self.forward_with(&self.params, x)
    }

    /// Mean squared error over all entries of the batch at `params`, with
    /// `weight * dL/dparams` added into `grad`.
    pub fn loss_and_grad(&self, params: &[f64], x: &Batch, y: &Batch, weight: f64, grad: &mut [f64]) -> f64 {
        let acts = self.forward_all(params, x);
        let out = acts.last().unwrap();
        let rows = x.rows();
        let scale = 1.0 / (rows * self.d_out()) as f64;
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .data
            .iter()
            .zip(&y.data)
            .map(|(p, t)| {
                let e = p - t;
                loss += e * e;
                2.0 * e * scale * weight
            })
            .collect();
        let offsets = self.offsets();
        for l in (0..self.layers()).rev() {
            let (d_in, d_out) = (self.sizes[l], self.sizes[l + 1]);
            let w_at = offsets[l];
            let b_at = w_at + d_in * d_out;
            let input = &acts[l];
            for r in 0..rows {
                let dr = &delta[r * d_out..(r + 1) * d_out];
                let xr = input.row(r);
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let g = &mut grad[w_at + o * d_in..w_at + (o + 1) * d_in];
                    for (gi, xi) in g.iter_mut().zip(xr) {
                        *gi += d * xi;
                    }
                    grad[b_at + o] += d;
                }
            }
            if l == 0 {
                break;
            }
            // Back through the weights and the tanh of the previous layer.
            let w = &params[w_at..b_at];
            let mut prev = vec![0.0; rows * d_in];
            for r in 0..rows {
                let dr = &delta[r * d_out..(r + 1) * d_out];
                let pr = &mut prev[r * d_in..(r + 1) * d_in];
                for (o, &d) in dr.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (pi, wi) in pr.iter_mut().zip(&w[o * d_in..(o + 1) * d_in]) {
                        *pi += d * wi;
                    }
                }
                for (pi, a) in pr.iter_mut().zip(input.row(r)) {
                    *pi *= 1.0 - a * a;
                }
            }
            delta = prev;
        }
        loss * scale
    }

    pub fn loss(&self, x: &Batch, y: &Batch) -> f64 {
        let out = self.forward(x);
        let n = out.data.len().max(1) as f64;
        out.data.iter().zip(&y.data).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
