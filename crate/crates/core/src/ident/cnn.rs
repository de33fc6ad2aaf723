//! 1D convolutional network over `[time][channel]` inputs.
//!
//! Every convolution uses zero "same" padding and is followed by ReLU and a
//! 2-to-1 max-pool. Depthwise layers filter each channel on its own with a
//! channel multiplier; separable layers add a pointwise (1x1) channel mix
//! after the depthwise filter. The flattened output feeds a ReLU
//! fully-connected embedding, dropout, and a linear softmax classifier.
//!
//! Parameters live in one flat vector so the optimizer and the serializer
//! see a single array.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConvSpec {
    Depthwise { multiplier: usize },
    Separable { out_channels: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CnnArch {
    pub input_len: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub conv: Vec<ConvSpec>,
    pub embedding: usize,
    pub classes: usize,
}

impl CnnArch {
    /// Two depthwise layers doubling the channels, then separable layers to
    /// 96, 128 and 192 channels, and a 128-wide embedding.
    pub fn standard(in_channels: usize, classes: usize) -> Self {
        Self {
            input_len: 256,
            in_channels,
            kernel: 3,
            conv: vec![
                ConvSpec::Depthwise { multiplier: 2 },
                ConvSpec::Depthwise { multiplier: 2 },
                ConvSpec::Separable { out_channels: 96 },
                ConvSpec::Separable { out_channels: 128 },
                ConvSpec::Separable { out_channels: 192 },
            ],
            embedding: 128,
            classes,
        }
    }

    /// `(length, channels)` after each convolution-pooling layer.
    pub fn shape_chain(&self) -> Vec<(usize, usize)> {
        let mut len = self.input_len;
        let mut ch = self.in_channels;
        self.conv
            .iter()
            .map(|spec| {
                ch = match *spec {
                    ConvSpec::Depthwise { multiplier } => ch * multiplier,
                    ConvSpec::Separable { out_channels } => out_channels,
                };
                len /= 2;
                (len, ch)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let pools = 1usize << self.conv.len();
        if self.kernel % 2 == 0 || self.kernel == 0 {
            return Err(Error::Validation("kernel size must be odd".into()));
        }
        if self.input_len == 0 || self.input_len % pools != 0 {
            return Err(Error::Validation(format!(
                "input length {} not divisible by {pools}",
                self.input_len
            )));
        }
        if self.in_channels == 0 || self.embedding == 0 || self.classes == 0 {
            return Err(Error::Validation("empty layer".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvLayout {
    pub spec: ConvSpec,
    pub len: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Depthwise taps stored `[tap][channel]`.
    pub w: usize,
    /// Pointwise weights `[c_in][c_out]` for separable layers.
    pub pw: usize,
    pub b: usize,
}

impl ConvLayout {
    /// Channels produced by the depthwise stage.
    fn c_dw(&self) -> usize {
        match self.spec {
            ConvSpec::Depthwise { .. } => self.c_out,
            ConvSpec::Separable { .. } => self.c_in,
        }
    }

    fn multiplier(&self) -> usize {
        self.c_dw() / self.c_in
    }
}

#[derive(Debug, Clone)]
pub struct Network {
    pub arch: CnnArch,
    pub(crate) conv: Vec<ConvLayout>,
    pub(crate) flat: usize,
    fc_w: usize,
    fc_b: usize,
    out_w: usize,
    out_b: usize,
    total: usize,
}

/// `c = op(a) * op(b) + beta * c` for row-major `m x k` and `k x n`
/// operands; `ta`/`tb` read the stored matrix transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], ta: bool, b: &[f64], tb: bool, beta: f64, c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserted lengths cover every element addressed by the
    // given shapes and strides, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Activations of one batch kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub batch: usize,
    /// `acts[0]` is the input, `acts[l + 1]` the pooled output of layer `l`.
    pub acts: Vec<Vec<f64>>,
    mid: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    arg: Vec<Vec<u8>>,
    emb_pre: Vec<f64>,
    pub emb: Vec<f64>,
    mask: Option<Vec<f64>>,
    emb_drop: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

/// Objective terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub cross_entropy: f64,
    pub center: f64,
    pub total: f64,
}

impl Network {
    pub fn new(arch: CnnArch) -> Result<Self> {
        arch.validate()?;
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let mut conv = Vec::with_capacity(arch.conv.len());
        let (mut len, mut c_in) = (arch.input_len, arch.in_channels);
        for &spec in &arch.conv {
            let (c_out, dw, pw) = match spec {
                ConvSpec::Depthwise { multiplier } => {
                    if multiplier == 0 {
                        return Err(Error::Validation("zero channel multiplier".into()));
                    }
                    (c_in * multiplier, c_in * multiplier, 0)
                }
                ConvSpec::Separable { out_channels } => (out_channels, c_in, c_in * out_channels),
            };
            let w = take(arch.kernel * dw);
            let pwo = take(pw);
            let b = take(c_out);
            conv.push(ConvLayout {
                spec,
                len,
                c_in,
                c_out,
                w,
                pw: pwo,
                b,
            });
            len /= 2;
            c_in = c_out;
        }
        let flat = len * c_in;
        let fc_w = take(flat * arch.embedding);
        let fc_b = take(arch.embedding);
        let out_w = take(arch.embedding * arch.classes);
        let out_b = take(arch.classes);
        let total = off;
        Ok(Self {
            arch,
            conv,
            flat,
            fc_w,
            fc_b,
            out_w,
            out_b,
            total,
        })
    }

    pub fn param_count(&self) -> usize {
        self.total
    }

    /// Width of the flattened convolution output.
    pub fn flat_len(&self) -> usize {
        self.flat
    }

    /// He-style initialization, zero biases.
    pub fn init_params<R: rand::Rng>(&self, r: &mut R) -> Vec<f64> {
        use rand_distr::{Distribution, Normal};
        let mut p = vec![0.0; self.total];
        let mut fill = |p: &mut [f64], std: f64| {
            let n = Normal::new(0.0, std).expect("positive std");
            p.iter_mut().for_each(|v| *v = n.sample(r));
        };
        let k = self.arch.kernel;
        for l in &self.conv {
            match l.spec {
                ConvSpec::Depthwise { .. } => {
                    fill(&mut p[l.w..l.w + k * l.c_out], (2.0 / k as f64).sqrt());
                }
                ConvSpec::Separable { .. } => {
                    fill(&mut p[l.w..l.w + k * l.c_in], (1.0 / k as f64).sqrt());
                    fill(&mut p[l.pw..l.pw + l.c_in * l.c_out], (2.0 / l.c_in as f64).sqrt());
                }
            }
        }
        let e = self.arch.embedding;
        fill(
            &mut p[self.fc_w..self.fc_w + self.flat * e],
            (2.0 / self.flat as f64).sqrt(),
        );
        fill(
            &mut p[self.out_w..self.out_w + e * self.arch.classes],
            (1.0 / e as f64).sqrt(),
        );
        p
    }

    fn input_size(&self) -> usize {
        self.arch.input_len * self.arch.in_channels
    }

    /// Forward pass over `batch` inputs laid out back to back. `mask` holds
    /// inverted-dropout multipliers for the embedding, or `None` at
    /// inference.
    pub fn forward(&self, p: &[f64], x: &[f64], batch: usize, mask: Option<Vec<f64>>) -> Trace {
        assert_eq!(x.len(), batch * self.input_size());
        let k = self.arch.kernel;
        let pad = k / 2;
        let n_layers = self.conv.len();
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut mid = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers);
        let mut arg = Vec::with_capacity(n_layers);
        acts.push(x.to_vec());

        for l in &self.conv {
            let input = acts.last().expect("input present");
            let (len, c_dw, mult) = (l.len, l.c_dw(), l.multiplier());
            let rows = batch * len;
            // Depthwise stage.
            let mut dw = vec![0.0; rows * c_dw];
            let taps = &p[l.w..l.w + k * c_dw];
            for b in 0..batch {
                for t in 0..len {
                    let out = &mut dw[(b * len + t) * c_dw..(b * len + t + 1) * c_dw];
                    for tap in 0..k {
                        let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        let row = &input[(b * len + src) * l.c_in..(b * len + src + 1) * l.c_in];
                        let w = &taps[tap * c_dw..(tap + 1) * c_dw];
                        if mult == 1 {
                            for ((o, wi), xi) in out.iter_mut().zip(w).zip(row) {
                                *o += wi * xi;
                            }
                        } else {
                            for (co, (o, wi)) in out.iter_mut().zip(w).enumerate() {
                                *o += wi * row[co / mult];
                            }
                        }
                    }
                }
            }
            // Pointwise stage and bias.
            let bias = &p[l.b..l.b + l.c_out];
            let mut z = match l.spec {
                ConvSpec::Depthwise { .. } => {
                    mid.push(Vec::new());
                    dw
                }
                ConvSpec::Separable { .. } => {
                    let mut z = vec![0.0; rows * l.c_out];
                    gemm(
                        rows,
                        l.c_in,
                        l.c_out,
                        &dw,
                        false,
                        &p[l.pw..l.pw + l.c_in * l.c_out],
                        false,
                        0.0,
                        &mut z,
                    );
                    mid.push(dw);
                    z
                }
            };
            for row in z.chunks_exact_mut(l.c_out) {
                for (v, bi) in row.iter_mut().zip(bias) {
                    *v += bi;
                }
            }
            // ReLU then 2-to-1 max-pool over time.
            let half = len / 2;
            let c = l.c_out;
            let mut pooled = vec![0.0; batch * half * c];
            let mut which = vec![0u8; batch * half * c];
            for b in 0..batch {
                for t in 0..half {
                    let r0 = &z[(b * len + 2 * t) * c..(b * len + 2 * t + 1) * c];
                    let r1 = &z[(b * len + 2 * t + 1) * c..(b * len + 2 * t + 2) * c];
                    let o = (b * half + t) * c;
                    for j in 0..c {
                        let (a0, a1) = (r0[j].max(0.0), r1[j].max(0.0));
                        if a1 > a0 {
                            pooled[o + j] = a1;
                            which[o + j] = 1;
                        } else {
                            pooled[o + j] = a0;
                        }
                    }
                }
            }
            pre.push(z);
            arg.push(which);
            acts.push(pooled);
        }

        let e = self.arch.embedding;
        let classes = self.arch.classes;
        let flat = acts.last().expect("conv output");
        let mut emb_pre = vec![0.0; batch * e];
        for row in emb_pre.chunks_exact_mut(e) {
            row.copy_from_slice(&p[self.fc_b..self.fc_b + e]);
        }
        gemm(
            batch,
            self.flat,
            e,
            flat,
            false,
            &p[self.fc_w..self.fc_w + self.flat * e],
            false,
            1.0,
            &mut emb_pre,
        );
        let emb: Vec<f64> = emb_pre.iter().map(|v| v.max(0.0)).collect();
        let emb_drop = match &mask {
            Some(m) => emb.iter().zip(m).map(|(a, b)| a * b).collect(),
            None => emb.clone(),
        };
        let mut logits = vec![0.0; batch * classes];
        for row in logits.chunks_exact_mut(classes) {
            row.copy_from_slice(&p[self.out_b..self.out_b + classes]);
        }
        gemm(
            batch,
            e,
            classes,
            &emb_drop,
            false,
            &p[self.out_w..self.out_w + e * classes],
            false,
            1.0,
            &mut logits,
        );
        let mut probs = logits.clone();
        for row in probs.chunks_exact_mut(classes) {
            softmax_in_place(row);
        }
        Trace {
            batch,
            acts,
            mid,
            pre,
            arg,
            emb_pre,
            emb,
            mask,
            emb_drop,
            logits,
            probs,
        }
    }

    /// Mean cross-entropy plus `center_weight` times the mean of
    /// `|emb - center[y]|^2 / 2`.
    pub fn loss(&self, tr: &Trace, ys: &[usize], centers: &[f64], center_weight: f64) -> Loss {
        let (classes, e) = (self.arch.classes, self.arch.embedding);
        let bf = tr.batch as f64;
        let mut ce = 0.0;
        let mut cl = 0.0;
        for (b, &y) in ys.iter().enumerate() {
            ce -= log_softmax_at(&tr.logits[b * classes..(b + 1) * classes], y);
            let emb = &tr.emb[b * e..(b + 1) * e];
            let c = &centers[y * e..(y + 1) * e];
            cl += 0.5 * emb.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        }
        let (ce, cl) = (ce / bf, cl / bf);
        Loss {
            cross_entropy: ce,
            center: cl,
            total: ce + center_weight * cl,
        }
    }

    /// Gradient of [`Network::loss`] with respect to every parameter;
    /// centers are held fixed.
    pub fn backward(&self, p: &[f64], tr: &Trace, ys: &[usize], centers: &[f64], center_weight: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.total];
        let batch = tr.batch;
        let (classes, e) = (self.arch.classes, self.arch.embedding);
        let bf = batch as f64;

        let mut dlogits = tr.probs.clone();
        for (b, &y) in ys.iter().enumerate() {
            dlogits[b * classes + y] -= 1.0;
        }
        dlogits.iter_mut().for_each(|v| *v /= bf);
        gemm(
            e,
            batch,
            classes,
            &tr.emb_drop,
            true,
            &dlogits,
            false,
            0.0,
            &mut g[self.out_w..self.out_w + e * classes],
        );
        column_sums(&dlogits, classes, &mut g[self.out_b..self.out_b + classes]);

        let mut demb = vec![0.0; batch * e];
        gemm(
            batch,
            classes,
            e,
            &dlogits,
            false,
            &p[self.out_w..self.out_w + e * classes],
            true,
            0.0,
            &mut demb,
        );
        if let Some(mask) = &tr.mask {
            demb.iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
        }
        for (b, &y) in ys.iter().enumerate() {
            let c = &centers[y * e..(y + 1) * e];
            for j in 0..e {
                demb[b * e + j] += center_weight * (tr.emb[b * e + j] - c[j]) / bf;
            }
        }
        demb.iter_mut().zip(&tr.emb_pre).for_each(|(d, z)| {
            if *z <= 0.0 {
                *d = 0.0;
            }
        });
        let flat = &tr.acts[self.conv.len()];
        gemm(
            self.flat,
            batch,
            e,
            flat,
            true,
            &demb,
            false,
            0.0,
            &mut g[self.fc_w..self.fc_w + self.flat * e],
        );
        column_sums(&demb, e, &mut g[self.fc_b..self.fc_b + e]);
        let mut dout = vec![0.0; batch * self.flat];
        gemm(
            batch,
            e,
            self.flat,
            &demb,
            false,
            &p[self.fc_w..self.fc_w + self.flat * e],
            true,
            0.0,
            &mut dout,
        );

        let k = self.arch.kernel;
        let pad = k / 2;
        for (li, l) in self.conv.iter().enumerate().rev() {
            let (len, c) = (l.len, l.c_out);
            let half = len / 2;
            let z = &tr.pre[li];
            // Route the pooled gradient back through max-pool and ReLU.
            let mut dz = vec![0.0; batch * len * c];
            let which = &tr.arg[li];
            for b in 0..batch {
                for t in 0..half {
                    for j in 0..c {
                        let o = (b * half + t) * c + j;
                        let src = (b * len + 2 * t + which[o] as usize) * c + j;
                        if z[src] > 0.0 {
                            dz[src] = dout[o];
                        }
                    }
                }
            }
            column_sums(&dz, c, &mut g[l.b..l.b + c]);

            let rows = batch * len;
            let c_dw = l.c_dw();
            let ddw = match l.spec {
                ConvSpec::Depthwise { .. } => dz,
                ConvSpec::Separable { .. } => {
                    let mid = &tr.mid[li];
                    gemm(
                        l.c_in,
                        rows,
                        c,
                        mid,
                        true,
                        &dz,
                        false,
                        0.0,
                        &mut g[l.pw..l.pw + l.c_in * c],
                    );
                    let mut ddw = vec![0.0; rows * l.c_in];
                    gemm(
                        rows,
                        c,
                        l.c_in,
                        &dz,
                        false,
                        &p[l.pw..l.pw + l.c_in * c],
                        true,
                        0.0,
                        &mut ddw,
                    );
                    ddw
                }
            };
            let input = &tr.acts[li];
            let taps = &p[l.w..l.w + k * c_dw];
            let mult = l.multiplier();
            let mut dx = vec![0.0; batch * len * l.c_in];
            let mut gw = vec![0.0; k * c_dw];
            for b in 0..batch {
                for t in 0..len {
                    let d = &ddw[(b * len + t) * c_dw..(b * len + t + 1) * c_dw];
                    for tap in 0..k {
                        let Some(src) = (t + tap).checked_sub(pad).filter(|&s| s < len) else {
                            continue;
                        };
                        let xr = (b * len + src) * l.c_in;
                        let gwt = &mut gw[tap * c_dw..(tap + 1) * c_dw];
                        let wt = &taps[tap * c_dw..(tap + 1) * c_dw];
                        if mult == 1 {
                            let xrow = &input[xr..xr + l.c_in];
                            for ((gi, di), xi) in gwt.iter_mut().zip(d).zip(xrow) {
                                *gi += di * xi;
                            }
                            let dxr = &mut dx[xr..xr + l.c_in];
                            for ((o, di), wi) in dxr.iter_mut().zip(d).zip(wt) {
                                *o += di * wi;
                            }
                        } else {
                            for co in 0..c_dw {
                                let ci = co / mult;
                                gwt[co] += d[co] * input[xr + ci];
                                dx[xr + ci] += d[co] * wt[co];
                            }
                        }
                    }
                }
            }
            g[l.w..l.w + k * c_dw].copy_from_slice(&gw);
            dout = dx;
        }
        g
    }
}

fn column_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.fill(0.0);
    for row in m.chunks_exact(cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

fn log_softmax_at(row: &[f64], y: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[y] - lse
}
