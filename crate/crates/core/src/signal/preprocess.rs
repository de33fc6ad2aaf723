use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::filter::{lowpass_zero_phase, Biquad};
use super::kinematics::derive_kinematics;
use super::{RawTrajectory, Signal, TARGET_RATE_HZ};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Leading and trailing samples slower than this fraction of the peak
    /// speed are dropped.
    pub trim_fraction: f64,
    pub cutoff_hz: f64,
    /// Even Butterworth order, applied forward and backward.
    pub filter_order: usize,
    pub target_rate: f64,
    /// Minimum length after trimming.
    pub min_len: usize,
    /// Rotate spatial groups so the writing direction is +x.
    pub posture: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            trim_fraction: 0.05,
            cutoff_hz: 10.0,
            filter_order: 4,
            target_rate: TARGET_RATE_HZ,
            min_len: 10,
            posture: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub signal: Signal,
    /// Axes that were constant before normalization and were zeroed.
    pub constant_axes: Vec<usize>,
}

/// Trim, low-pass, resample, posture-normalize and z-score a signal.
pub fn preprocess(sig: &Signal, cfg: &PreprocessConfig) -> Result<Preprocessed> {
    let (start, end) = trim_bounds(sig, cfg.trim_fraction)?;
    if end - start < cfg.min_len {
        return Err(Error::TooShort {
            len: end - start,
            min: cfg.min_len,
        });
    }
    let trimmed = sig.with_samples(sig.samples().slice_rows(start, end))?;
    let filtered = lowpass(&trimmed, cfg.cutoff_hz, cfg.filter_order)?;
    let resampled = resample_linear(&filtered, cfg.target_rate)?;
    let oriented = if cfg.posture {
        normalize_posture(&resampled)?
    } else {
        resampled
    };
    let (signal, constant_axes) = zscore(&oriented)?;
    if !constant_axes.is_empty() {
        warn!("constant axes zeroed during normalization: {constant_axes:?}");
    }
    Ok(Preprocessed { signal, constant_axes })
}

/// Kinematics derivation followed by [`preprocess`].
pub fn prepare(raw: &RawTrajectory, cfg: &PreprocessConfig) -> Result<Signal> {
    Ok(preprocess(&derive_kinematics(raw)?, cfg)?.signal)
}

/// Per-sample speed: velocity axes when present, otherwise finite
/// differences of the position axes (or of every axis).
fn speed_profile(sig: &Signal) -> Vec<f64> {
    let vel = sig.spatial_group("vel");
    if !vel.is_empty() {
        return sig
            .samples()
            .iter_rows()
            .map(|r| vel.iter().map(|&j| r[j] * r[j]).sum::<f64>().sqrt())
            .collect();
    }
    let pos = sig.spatial_group("pos");
    let cols: Vec<usize> = if pos.is_empty() { (0..sig.dims()).collect() } else { pos };
    let n = sig.len();
    let m = sig.samples();
    (0..n)
        .map(|i| {
            let (a, b) = if i + 1 < n {
                (i, i + 1)
            } else {
                (i.saturating_sub(1), i)
            };
            if a == b {
                return 0.0;
            }
            cols.iter()
                .map(|&j| (m.get(b, j) - m.get(a, j)).powi(2))
                .sum::<f64>()
                .sqrt()
                * sig.rate()
        })
        .collect()
}

/// Half-open row range kept after dropping slow leading/trailing samples.
pub fn trim_bounds(sig: &Signal, fraction: f64) -> Result<(usize, usize)> {
    let speed = speed_profile(sig);
    let peak = speed.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::EmptyAfterTrim);
    }
    let threshold = fraction * peak;
    let start = speed.iter().position(|&v| v >= threshold);
    let last = speed.iter().rposition(|&v| v >= threshold);
    match (start, last) {
        (Some(s), Some(e)) => Ok((s, e + 1)),
        _ => Err(Error::EmptyAfterTrim),
    }
}

fn lowpass(sig: &Signal, cutoff_hz: f64, order: usize) -> Result<Signal> {
    // Nothing above the cutoff is representable at or below twice its rate.
    if sig.rate() <= 2.0 * cutoff_hz {
        return Ok(sig.clone());
    }
    let sections = Biquad::butterworth_lowpass(order, cutoff_hz, sig.rate());
    let (n, d) = (sig.len(), sig.dims());
    let mut out = Matrix::zeros(n, d);
    for j in 0..d {
        let col: Vec<f64> = sig.samples().column(j).collect();
        for (i, v) in lowpass_zero_phase(&col, &sections).into_iter().enumerate() {
            out.set(i, j, v);
        }
    }
    sig.with_samples(out)
}

/// Linear interpolation onto a uniform grid at `target_rate` covering the
/// original time span.
pub fn resample_linear(sig: &Signal, target_rate: f64) -> Result<Signal> {
    let n = sig.len();
    let d = sig.dims();
    let span = (n - 1) as f64 / sig.rate();
    let out_len = (span * target_rate + 1e-9).floor() as usize + 1;
    let mut out = Matrix::zeros(out_len, d);
    let step = sig.rate() / target_rate;
    for k in 0..out_len {
        let pos = k as f64 * step;
        let i = (pos.floor() as usize).min(n - 1);
        let frac = pos - i as f64;
        let row = out.row_mut(k);
        if i + 1 >= n || frac <= 0.0 {
            row.copy_from_slice(sig.row(i));
        } else {
            let (a, b) = (sig.row(i), sig.row(i + 1));
            for j in 0..d {
                row[j] = a[j] + frac * (b[j] - a[j]);
            }
        }
    }
    Signal::new(out, target_rate, sig.axes().to_vec())
}

/// Rotates every spatial group (`pos_*`, `vel_*`, `acc_*`) so that the first
/// principal direction of the positions points along +x. The direction's
/// sign follows the net displacement from the start to the end of the
/// writing. Signals without position axes are returned unchanged.
pub fn normalize_posture(sig: &Signal) -> Result<Signal> {
    let pos = sig.spatial_group("pos");
    let k = pos.len();
    if !(2..=3).contains(&k) {
        return Ok(sig.clone());
    }
    let groups: Vec<Vec<usize>> = ["pos", "vel", "acc"]
        .iter()
        .map(|g| sig.spatial_group(g))
        .filter(|g| g.len() == k)
        .collect();

    let Some(dir) = principal_direction(sig, &pos) else {
        return Ok(sig.clone());
    };
    let rot = rotation_to_x(&dir);

    let mut out = sig.samples().clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        for g in &groups {
            let v: Vec<f64> = g.iter().map(|&j| row[j]).collect();
            for (r, &j) in g.iter().enumerate() {
                row[j] = (0..k).map(|c| rot[r][c] * v[c]).sum();
            }
        }
    }
    sig.with_samples(out)
}

fn principal_direction(sig: &Signal, pos: &[usize]) -> Option<Vec<f64>> {
    let k = pos.len();
    let n = sig.len() as f64;
    let m = sig.samples();
    let mean: Vec<f64> = pos.iter().map(|&j| m.column(j).sum::<f64>() / n).collect();
    let mut cov = vec![vec![0.0; k]; k];
    for row in m.iter_rows() {
        for a in 0..k {
            for b in 0..k {
                cov[a][b] += (row[pos[a]] - mean[a]) * (row[pos[b]] - mean[b]);
            }
        }
    }
    for r in cov.iter_mut() {
        for v in r.iter_mut() {
            *v /= n;
        }
    }
    let trace: f64 = (0..k).map(|a| cov[a][a]).sum();
    if trace <= f64::MIN_POSITIVE {
        return None;
    }
    let tol = 1e-9 * trace;
    let off_max = (0..k)
        .flat_map(|a| (0..k).filter(move |&b| b != a).map(move |b| (a, b)))
        .map(|(a, b)| cov[a][b].abs())
        .fold(0.0, f64::max);

    let mut dir = vec![0.0; k];
    if off_max <= tol {
        // Already a principal frame; ties resolve to the lowest axis.
        let mut best = 0;
        for a in 1..k {
            if cov[a][a] > cov[best][best] + tol {
                best = a;
            }
        }
        dir[best] = 1.0;
    } else {
        let (vals, vecs) = jacobi_eigen(cov);
        let best = (0..k).fold(0, |b, a| if vals[a] > vals[b] { a } else { b });
        for a in 0..k {
            dir[a] = vecs[a][best];
        }
    }

    // Displacement between the mean of the first and last tenth.
    let edge = (sig.len() / 10).max(1);
    let disp: f64 = (0..k)
        .map(|a| {
            let head: f64 = (0..edge).map(|i| m.get(i, pos[a])).sum::<f64>();
            let tail: f64 = (sig.len() - edge..sig.len()).map(|i| m.get(i, pos[a])).sum::<f64>();
            (tail - head) / edge as f64 * dir[a]
        })
        .sum();
    if disp < 0.0 {
        dir.iter_mut().for_each(|v| *v = -*v);
    }
    Some(dir)
}

/// Proper rotation mapping unit vector `v` onto +x.
fn rotation_to_x(v: &[f64]) -> Vec<Vec<f64>> {
    if v.len() == 2 {
        let (s, c) = v[1].atan2(v[0]).sin_cos();
        return vec![vec![c, s], vec![-s, c]];
    }
    let c = v[0];
    if c <= -1.0 + 1e-12 {
        return vec![vec![-1.0, 0.0, 0.0], vec![0.0, -1.0, 0.0], vec![0.0, 0.0, 1.0]];
    }
    // axis = v x e_x = (0, v_z, -v_y)
    let (ax, ay, az) = (0.0, v[2], -v[1]);
    let kmat = [[0.0, -az, ay], [az, 0.0, -ax], [-ay, ax, 0.0]];
    let f = 1.0 / (1.0 + c);
    let mut r = vec![vec![0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let k2: f64 = (0..3).map(|m| kmat[i][m] * kmat[m][j]).sum();
            r[i][j] = if i == j { 1.0 } else { 0.0 } + kmat[i][j] + f * k2;
        }
    }
    r
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix.
/// Returns eigenvalues and eigenvectors as columns.
fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    for _ in 0..64 {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| a[p][q] * a[p][q])
            .sum();
        let diag: f64 = (0..n).map(|p| a[p][p] * a[p][p]).sum();
        if off <= 1e-30 * diag {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sign / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let (arp, arq) = (a[r][p], a[r][q]);
                    a[r][p] = c * arp - s * arq;
                    a[r][q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let (apr, aqr) = (a[p][r], a[q][r]);
                    a[p][r] = c * apr - s * aqr;
                    a[q][r] = s * apr + c * aqr;
                }
                for r in 0..n {
                    let (vrp, vrq) = (v[r][p], v[r][q]);
                    v[r][p] = c * vrp - s * vrq;
                    v[r][q] = s * vrp + c * vrq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i][i]).collect(), v)
}

/// Per-axis z-score with population statistics. Constant axes become zeros
/// and their indices are returned.
pub fn zscore(sig: &Signal) -> Result<(Signal, Vec<usize>)> {
    let n = sig.len() as f64;
    let d = sig.dims();
    let m = sig.samples();
    let mut out = m.clone();
    let mut constant = Vec::new();
    for j in 0..d {
        let mean = m.column(j).sum::<f64>() / n;
        let var = m.column(j).map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        if std <= 1e-12 * mean.abs().max(1.0) {
            constant.push(j);
            for i in 0..out.rows() {
                out.set(i, j, 0.0);
            }
            continue;
        }
        for i in 0..out.rows() {
            out.set(i, j, (m.get(i, j) - mean) / std);
        }
    }
    Ok((sig.with_samples(out)?, constant))
}
