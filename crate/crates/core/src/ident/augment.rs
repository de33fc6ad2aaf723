//! Registration-time augmentation for the account index.
//!
//! Every registration signal serves in turn as a reference that the others
//! are DTW-aligned to. Random pairs sharing a reference then swap a segment,
//! and each recombined signal gets a Hann-shaped local time warp and gain
//! change on one more random segment.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::align::{dtw_align, DtwConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub target: usize,
    /// Bound on the local time-rate change of the warp.
    pub max_warp: f64,
    /// Bound on the relative gain change.
    pub max_gain: f64,
    pub dtw: DtwConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            target: 125,
            max_warp: 0.1,
            max_gain: 0.1,
            dtw: DtwConfig::default(),
        }
    }
}

/// Where and how a generated signal was perturbed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub start: usize,
    pub end: usize,
    /// Peak time-rate change, in `[-max_warp, max_warp]`.
    pub warp: f64,
    /// Peak gain change, in `[-max_gain, max_gain]`.
    pub gain: f64,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    pub signals: Vec<Signal>,
    /// Index of the registration signal each output is aligned to.
    pub reference: Vec<usize>,
    /// `None` for the aligned originals.
    pub perturbation: Vec<Option<Perturbation>>,
}

/// Expands `signals` to `cfg.target` training signals.
pub fn augment_registration(signals: &[Signal], cfg: &AugmentConfig, seed: u64) -> Result<Augmented> {
    let k = signals.len();
    if k < 2 {
        return Err(Error::InsufficientRegistration { got: k, need: 2 });
    }
    let mut groups: Vec<Vec<Matrix>> = Vec::with_capacity(k);
    for (r, reference) in signals.iter().enumerate() {
        let mut g = vec![reference.samples().clone()];
        for (j, s) in signals.iter().enumerate() {
            if j != r {
                g.push(dtw_align(s, reference, &cfg.dtw)?.samples.into_samples());
            }
        }
        groups.push(g);
    }

    let mut out = Augmented {
        signals: Vec::with_capacity(cfg.target),
        reference: Vec::with_capacity(cfg.target),
        perturbation: Vec::with_capacity(cfg.target),
    };
    let template = &signals[0];
    'copy: for (r, g) in groups.iter().enumerate() {
        for m in g {
            if out.signals.len() == cfg.target {
                break 'copy;
            }
            out.signals.push(template.with_samples(m.clone())?);
            out.reference.push(r);
            out.perturbation.push(None);
        }
    }

    let mut rg = rng::rng(seed);
    while out.signals.len() < cfg.target {
        let r = rg.random_range(0..k);
        let g = &groups[r];
        let a = rg.random_range(0..g.len());
        let b = (a + rg.random_range(1..g.len())) % g.len();
        let len = g[a].rows();
        let (s0, s1) = random_segment(len, &mut rg);
        let mut child = g[a].clone();
        for t in s0..s1 {
            child.row_mut(t).copy_from_slice(g[b].row(t));
        }
        let (p0, p1) = random_segment(len, &mut rg);
        let p = Perturbation {
            start: p0,
            end: p1,
            warp: rg.random_range(-cfg.max_warp..=cfg.max_warp),
            gain: rg.random_range(-cfg.max_gain..=cfg.max_gain),
        };
        perturb(&mut child, &p);
        out.signals.push(template.with_samples(child)?);
        out.reference.push(r);
        out.perturbation.push(Some(p));
    }
    Ok(out)
}

/// Segment covering between a tenth and a half of the signal.
fn random_segment<R: Rng>(len: usize, r: &mut R) -> (usize, usize) {
    let lo = (len / 10).max(2).min(len);
    let hi = (len / 2).max(lo);
    let n = r.random_range(lo..=hi);
    let start = r.random_range(0..=len - n);
    (start, start + n)
}

/// Applies `p` in place. Inside the segment, sample `t` is read at
/// `t + warp * n * sin(2 pi x) / (2 pi)` with `x` the relative position, so
/// the local rate stays within `1 +- warp` and the segment ends stay fixed,
/// then scaled by `1 + gain * hann(x)`.
pub fn perturb(m: &mut Matrix, p: &Perturbation) {
    let n = p.end - p.start;
    if n < 2 {
        return;
    }
    let span = (n - 1) as f64;
    let src = m.slice_rows(p.start, p.end);
    for i in 0..n {
        let x = i as f64 / span;
        let pos = (i as f64 + p.warp * span * (2.0 * PI * x).sin() / (2.0 * PI)).clamp(0.0, span);
        let lo = (pos.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        let f = pos - lo as f64;
        let gain = 1.0 + p.gain * 0.5 * (1.0 - (2.0 * PI * x).cos());
        let row = m.row_mut(p.start + i);
        for (j, v) in row.iter_mut().enumerate() {
            let a = src.get(lo, j);
            let b = src.get(hi, j);
            *v = (a + (b - a) * f) * gain;
        }
    }
}
