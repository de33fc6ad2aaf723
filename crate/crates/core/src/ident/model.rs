use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::signal::Signal;

use super::cnn::{CnnArch, Network};

pub const MODEL_VERSION: u32 = 1;

/// Per-axis linear interpolation of `s` onto `len` evenly spaced points
/// spanning the whole signal. Both end samples are copied exactly.
pub fn stretch_to_fixed(s: &Signal, len: usize) -> Result<Matrix> {
    let l = s.len();
    if l < 2 {
        return Err(Error::TooShort { len: l, min: 2 });
    }
    let d = s.dims();
    let mut out = Matrix::zeros(len, d);
    let last = (l - 1) as f64;
    let denom = len.saturating_sub(1).max(1) as f64;
    for i in 0..len {
        let pos = i as f64 * last / denom;
        let lo = (pos.floor() as usize).min(l - 1);
        let f = pos - lo as f64;
        let row = out.row_mut(i);
        if f == 0.0 {
            row.copy_from_slice(s.row(lo));
        } else {
            let (a, b) = (s.row(lo), s.row(lo + 1));
            for j in 0..d {
                row[j] = a[j] + (b[j] - a[j]) * f;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub center_weight: f64,
    /// Step size of the per-batch center update.
    pub center_rate: f64,
    pub dropout: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            center_weight: 0.1,
            center_rate: 0.5,
            dropout: 0.5,
            batch_size: 32,
            seed: 17,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Validation("learning rate must be positive".into()));
        }
        if !(self.center_weight >= 0.0) {
            return Err(Error::Validation("center-loss weight must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Validation("dropout rate must lie in [0, 1)".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// A trained account index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnModel {
    pub version: u32,
    pub arch: CnnArch,
    pub params: Vec<f64>,
    /// Account number of each output class.
    pub labels: Vec<u64>,
    /// Embedding centers, `classes x embedding`.
    pub centers: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch objective of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Mean batch cross-entropy of each epoch.
    pub epoch_cross_entropy: Vec<f64>,
    /// Accuracy over the training set with dropout off, after the last epoch.
    pub train_accuracy: f64,
    pub samples: usize,
}

/// Trains the standard architecture on `(signal, account)` pairs.
pub fn train_cnn(labeled: &[(Signal, u64)], cfg: &TrainConfig) -> Result<(CnnModel, TrainReport)> {
    let dims = labeled.first().map_or(0, |(s, _)| s.dims());
    let classes = distinct_labels(labeled).len();
    train_with_arch(labeled, CnnArch::standard(dims, classes), cfg)
}

fn distinct_labels(labeled: &[(Signal, u64)]) -> Vec<u64> {
    let mut v: Vec<u64> = labeled.iter().map(|(_, l)| *l).collect();
    v.sort_unstable();
    v.dedup();
    v
}

/// Trains with an explicit architecture; `arch.classes` is overwritten with
/// the number of distinct labels.
pub fn train_with_arch(
    labeled: &[(Signal, u64)],
    mut arch: CnnArch,
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainReport)> {
    cfg.validate()?;
    let labels = distinct_labels(labeled);
    if labels.len() < 2 {
        return Err(Error::DegenerateTask(format!(
            "{} class(es), need at least 2",
            labels.len()
        )));
    }
    let dims = labeled[0].0.dims();
    if labeled.iter().any(|(s, _)| s.dims() != dims) {
        return Err(Error::Incompatible("training signals differ in width".into()));
    }
    arch.in_channels = dims;
    arch.classes = labels.len();
    let net = Network::new(arch)?;
    let index: BTreeMap<u64, usize> = labels.iter().enumerate().map(|(i, &l)| (l, i)).collect();

    let len = net.arch.input_len;
    let size = len * dims;
    let mut inputs = Vec::with_capacity(labeled.len() * size);
    for (s, _) in labeled {
        inputs.extend_from_slice(stretch_to_fixed(s, len)?.as_slice());
    }
    let ys: Vec<usize> = labeled.iter().map(|(_, l)| index[l]).collect();

    let mut r = rng::rng(cfg.seed);
    let mut params = net.init_params(&mut r);
    let e = net.arch.embedding;
    let mut centers = initial_centers(&net, &params, &inputs, &ys, labels.len(), cfg.batch_size);
    let mut adam = Adam::new(params.len());
    let mut order: Vec<usize> = (0..labeled.len()).collect();
    let keep = 1.0 - cfg.dropout;
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    let mut epoch_cross_entropy = Vec::with_capacity(cfg.epochs);
    let mut xb = Vec::with_capacity(cfg.batch_size * size);
    let mut yb = Vec::with_capacity(cfg.batch_size);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut r);
        let mut sum = 0.0;
        let mut ce = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&inputs[i * size..(i + 1) * size]);
                yb.push(ys[i]);
            }
            let n = chunk.len();
            let mask: Vec<f64> = (0..n * e)
                .map(|_| if r.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let trace = net.forward(&params, &xb, n, Some(mask));
            let loss = net.loss(&trace, &yb, &centers, cfg.center_weight);
            if !loss.total.is_finite() {
                return Err(Error::TrainingFailure(format!(
                    "loss became {} in epoch {}",
                    loss.total,
                    epoch + 1
                )));
            }
            let grad = net.backward(&params, &trace, &yb, &centers, cfg.center_weight);
            adam.step(&mut params, &grad, cfg);
            update_centers(&mut centers, &trace.emb, &yb, e, cfg.center_rate);
            sum += loss.total;
            ce += loss.cross_entropy;
            batches += 1;
        }
        let mean = sum / batches as f64;
        log::debug!("epoch {} loss {mean:.5}", epoch + 1);
        epoch_loss.push(mean);
        epoch_cross_entropy.push(ce / batches as f64);
    }

    let model = CnnModel {
        version: MODEL_VERSION,
        arch: net.arch.clone(),
        params,
        labels,
        centers,
    };
    let mut correct = 0;
    for start in (0..labeled.len()).step_by(cfg.batch_size) {
        let n = cfg.batch_size.min(labeled.len() - start);
        let trace = net.forward(&model.params, &inputs[start * size..(start + n) * size], n, None);
        for (b, row) in trace.probs.chunks(model.labels.len()).enumerate() {
            if argmax(row) == ys[start + b] {
                correct += 1;
            }
        }
    }
    let report = TrainReport {
        epoch_loss,
        epoch_cross_entropy,
        train_accuracy: correct as f64 / labeled.len() as f64,
        samples: labeled.len(),
    };
    Ok((model, report))
}

/// Per-class mean embedding under the initial weights.
fn initial_centers(
    net: &Network,
    params: &[f64],
    inputs: &[f64],
    ys: &[usize],
    classes: usize,
    batch: usize,
) -> Vec<f64> {
    let e = net.arch.embedding;
    let size = inputs.len() / ys.len();
    let mut sums = vec![0.0; classes * e];
    let mut counts = vec![0usize; classes];
    for start in (0..ys.len()).step_by(batch) {
        let n = batch.min(ys.len() - start);
        let trace = net.forward(params, &inputs[start * size..(start + n) * size], n, None);
        for (b, emb) in trace.emb.chunks(e).enumerate() {
            let y = ys[start + b];
            counts[y] += 1;
            for (s, v) in sums[y * e..(y + 1) * e].iter_mut().zip(emb) {
                *s += v;
            }
        }
    }
    for (y, &n) in counts.iter().enumerate() {
        sums[y * e..(y + 1) * e].iter_mut().for_each(|s| *s /= n as f64);
    }
    sums
}

/// Moves each center present in the batch toward the mean of its
/// embeddings: `c -= rate * sum(c - e) / (1 + n)`.
fn update_centers(centers: &mut [f64], emb: &[f64], ys: &[usize], e: usize, rate: f64) {
    let mut delta: BTreeMap<usize, (Vec<f64>, usize)> = BTreeMap::new();
    for (b, &y) in ys.iter().enumerate() {
        let entry = delta.entry(y).or_insert_with(|| (vec![0.0; e], 0));
        let c = &centers[y * e..(y + 1) * e];
        for ((d, ci), ei) in entry.0.iter_mut().zip(c).zip(&emb[b * e..(b + 1) * e]) {
            *d += ci - ei;
        }
        entry.1 += 1;
    }
    for (y, (d, n)) in delta {
        let scale = rate / (1 + n) as f64;
        for (c, di) in centers[y * e..(y + 1) * e].iter_mut().zip(&d) {
            *c -= scale * di;
        }
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, p: &mut [f64], g: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..p.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            p[i] -= cfg.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + cfg.epsilon);
        }
    }
}

impl CnnModel {
    pub fn network(&self) -> Result<Network> {
        let net = Network::new(self.arch.clone())?;
        if net.param_count() != self.params.len() {
            return Err(Error::Malformed(format!(
                "model has {} parameters, architecture needs {}",
                self.params.len(),
                net.param_count()
            )));
        }
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MODEL_VERSION {
            return Err(Error::Malformed(format!("unsupported model version {}", self.version)));
        }
        self.network()?;
        if self.labels.len() != self.arch.classes || self.centers.len() != self.arch.classes * self.arch.embedding {
            return Err(Error::Malformed("label table does not match the class count".into()));
        }
        Ok(())
    }

    fn input(&self, s: &Signal) -> Result<Vec<f64>> {
        if s.dims() != self.arch.in_channels {
            return Err(Error::Incompatible(format!(
                "signal has {} axes, model expects {}",
                s.dims(),
                self.arch.in_channels
            )));
        }
        Ok(stretch_to_fixed(s, self.arch.input_len)?.into_vec())
    }

    /// Class probabilities in label order.
    pub fn probabilities(&self, s: &Signal) -> Result<Vec<f64>> {
        let net = self.network()?;
        Ok(net.forward(&self.params, &self.input(s)?, 1, None).probs)
    }

    pub fn embedding(&self, s: &Signal) -> Result<Vec<f64>> {
        let net = self.network()?;
        Ok(net.forward(&self.params, &self.input(s)?, 1, None).emb)
    }

    /// The `k` most probable accounts, most probable first; equal
    /// probabilities rank the smaller account number first. `k` above the
    /// class count is clipped.
    pub fn predict_topk(&self, s: &Signal, k: usize) -> Result<Vec<(u64, f64)>> {
        if k == 0 {
            return Err(Error::Validation("k must be at least 1".into()));
        }
        let n = self.labels.len();
        if k > n {
            log::warn!("top-{k} requested from {n} classes; returning {n}");
        }
        let probs = self.probabilities(s)?;
        let mut ranked: Vec<(u64, f64)> = self.labels.iter().copied().zip(probs).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k.min(n));
        Ok(ranked)
    }
}
