//! Linear soft-margin SVM trained with Platt's Sequential Minimal
//! Optimization. The weight vector is kept explicitly, so every decision
//! value costs one dot product.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Label of the genuine ("true-user") class. Genuine requests sit on the
/// negative side of the hyperplane so that a lower decision value means a
/// closer match, and acceptance is `score < threshold`.
pub const GENUINE: f64 = -1.0;
pub const IMPOSTOR: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoConfig {
    pub c: f64,
    /// KKT tolerance.
    pub tol: f64,
    pub max_passes: usize,
}

impl Default for SmoConfig {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-3,
            max_passes: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSvm {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearSvm {
    #[inline]
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }

    pub fn weight_norm(&self) -> f64 {
        dot(&self.w, &self.w).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SvmWarning {
    /// The classes could not be told apart; the weight vector vanished and
    /// every input gets the same decision value.
    Degenerate { weight_norm: f64 },
}

#[derive(Debug, Clone)]
pub struct SvmFit {
    pub svm: LinearSvm,
    pub alphas: Vec<f64>,
    pub passes: usize,
    pub warning: Option<SvmWarning>,
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Trains on genuine (label -1) and impostor (label +1) vectors.
pub fn train_svm(genuine: &[Vec<f64>], impostor: &[Vec<f64>], cfg: &SmoConfig, seed: u64) -> Result<SvmFit> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InsufficientTrainingData(format!(
            "{} genuine and {} impostor vectors",
            genuine.len(),
            impostor.len()
        )));
    }
    let dim = genuine[0].len();
    if dim == 0 || genuine.iter().chain(impostor).any(|v| v.len() != dim) {
        return Err(Error::InsufficientTrainingData(
            "feature vectors differ in length".into(),
        ));
    }
    let mut x = Vec::with_capacity((genuine.len() + impostor.len()) * dim);
    let mut y = Vec::with_capacity(genuine.len() + impostor.len());
    for v in genuine {
        x.extend_from_slice(v);
        y.push(GENUINE);
    }
    for v in impostor {
        x.extend_from_slice(v);
        y.push(IMPOSTOR);
    }
    train_labeled(&x, dim, &y, cfg, seed)
}

/// SMO on a row-major design matrix with labels in `{-1, +1}`.
pub fn train_labeled(x: &[f64], dim: usize, y: &[f64], cfg: &SmoConfig, seed: u64) -> Result<SvmFit> {
    let mut smo = Smo::new(x, dim, y, cfg, seed);
    let passes = smo.run()?;
    let svm = LinearSvm { w: smo.w, b: smo.b };
    let norm = svm.weight_norm();
    let warning = (norm < 1e-8).then_some(SvmWarning::Degenerate { weight_norm: norm });
    if let Some(w) = warning {
        log::warn!("SVM margin quality: {w:?}");
    }
    Ok(SvmFit {
        svm,
        alphas: smo.alpha,
        passes,
        warning,
    })
}

/// Dual objective `sum(alpha) - |sum(alpha_i y_i x_i)|^2 / 2`.
pub fn dual_objective(x: &[f64], dim: usize, y: &[f64], alpha: &[f64]) -> f64 {
    let mut w = vec![0.0; dim];
    for (i, (&a, &yi)) in alpha.iter().zip(y).enumerate() {
        for (wj, xj) in w.iter_mut().zip(&x[i * dim..(i + 1) * dim]) {
            *wj += a * yi * xj;
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * dot(&w, &w)
}

struct Smo<'a> {
    x: &'a [f64],
    dim: usize,
    y: &'a [f64],
    alpha: Vec<f64>,
    w: Vec<f64>,
    b: f64,
    c: f64,
    tol: f64,
    max_passes: usize,
    sq_norms: Vec<f64>,
    rng: rng::Rng,
}

const STEP_EPS: f64 = 1e-12;

impl<'a> Smo<'a> {
    fn new(x: &'a [f64], dim: usize, y: &'a [f64], cfg: &SmoConfig, seed: u64) -> Self {
        let n = y.len();
        let sq_norms = (0..n)
            .map(|i| {
                let r = &x[i * dim..(i + 1) * dim];
                dot(r, r)
            })
            .collect();
        Self {
            x,
            dim,
            y,
            alpha: vec![0.0; n],
            w: vec![0.0; dim],
            b: 0.0,
            c: cfg.c,
            tol: cfg.tol,
            max_passes: cfg.max_passes,
            sq_norms,
            rng: rng::rng(seed),
        }
    }

    #[inline]
    fn row(&self, i: usize) -> &'a [f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn error(&self, i: usize) -> f64 {
        dot(&self.w, self.row(i)) + self.b - self.y[i]
    }

    #[inline]
    fn non_bound(&self, i: usize) -> bool {
        self.alpha[i] > 0.0 && self.alpha[i] < self.c
    }

    fn run(&mut self) -> Result<usize> {
        let n = self.y.len();
        let mut examine_all = true;
        let mut passes = 0;
        loop {
            if passes >= self.max_passes {
                return Err(Error::Convergence { passes });
            }
            let start = self.rng.random_range(0..n);
            let mut changed = 0;
            for off in 0..n {
                let i = (start + off) % n;
                if (examine_all || self.non_bound(i)) && self.examine(i) {
                    changed += 1;
                }
            }
            passes += 1;
            if examine_all {
                if changed == 0 {
                    return Ok(passes);
                }
                examine_all = false;
            } else if changed == 0 {
                examine_all = true;
            }
        }
    }

    fn examine(&mut self, i2: usize) -> bool {
        let y2 = self.y[i2];
        let a2 = self.alpha[i2];
        let e2 = self.error(i2);
        let r2 = e2 * y2;
        if !((r2 < -self.tol && a2 < self.c) || (r2 > self.tol && a2 > 0.0)) {
            return false;
        }
        let n = self.y.len();
        let nb: Vec<usize> = (0..n).filter(|&i| self.non_bound(i)).collect();

        if nb.len() > 1 {
            let mut best = None;
            let mut gap = -1.0;
            for &i in &nb {
                let g = (self.error(i) - e2).abs();
                if g > gap {
                    gap = g;
                    best = Some(i);
                }
            }
            if let Some(i1) = best {
                if self.take_step(i1, i2, e2) {
                    return true;
                }
            }
        }
        if !nb.is_empty() {
            let start = self.rng.random_range(0..nb.len());
            for off in 0..nb.len() {
                if self.take_step(nb[(start + off) % nb.len()], i2, e2) {
                    return true;
                }
            }
        }
        let start = self.rng.random_range(0..n);
        for off in 0..n {
            if self.take_step((start + off) % n, i2, e2) {
                return true;
            }
        }
        false
    }

    fn take_step(&mut self, i1: usize, i2: usize, e2: f64) -> bool {
        if i1 == i2 {
            return false;
        }
        let (a1, a2) = (self.alpha[i1], self.alpha[i2]);
        let (y1, y2) = (self.y[i1], self.y[i2]);
        let e1 = self.error(i1);
        let s = y1 * y2;
        let c = self.c;
        let (lo, hi) = if s < 0.0 {
            ((a2 - a1).max(0.0), (c + a2 - a1).min(c))
        } else {
            ((a1 + a2 - c).max(0.0), (a1 + a2).min(c))
        };
        if hi - lo < STEP_EPS {
            return false;
        }
        let (x1, x2) = (self.row(i1), self.row(i2));
        let k12 = dot(x1, x2);
        let eta = self.sq_norms[i1] + self.sq_norms[i2] - 2.0 * k12;

        let new_a2 = if eta > 1e-12 {
            (a2 + y2 * (e1 - e2) / eta).clamp(lo, hi)
        } else {
            // Flat curvature: compare the dual objective at both ends.
            // Gain of moving alpha2 by delta with alpha1 compensating.
            let slope = (1.0 - s) - y2 * (dot(&self.w, x2) - dot(&self.w, x1));
            let gain = |d: f64| d * slope - 0.5 * d * d * eta;
            let (gl, gh) = (gain(lo - a2), gain(hi - a2));
            if gl > gh + STEP_EPS {
                lo
            } else if gh > gl + STEP_EPS {
                hi
            } else {
                return false;
            }
        };
        if (new_a2 - a2).abs() < STEP_EPS * (new_a2 + a2 + STEP_EPS) {
            return false;
        }
        let mut new_a1 = a1 + s * (a2 - new_a2);
        // Round-off can push alpha1 a hair outside the box.
        new_a1 = new_a1.clamp(0.0, c);

        let d1 = y1 * (new_a1 - a1);
        let d2 = y2 * (new_a2 - a2);
        let b1 = self.b - e1 - d1 * self.sq_norms[i1] - d2 * k12;
        let b2 = self.b - e2 - d1 * k12 - d2 * self.sq_norms[i2];
        self.b = if new_a1 > 0.0 && new_a1 < c {
            b1
        } else if new_a2 > 0.0 && new_a2 < c {
            b2
        } else {
            0.5 * (b1 + b2)
        };
        for ((w, p), q) in self.w.iter_mut().zip(x1).zip(x2) {
            *w += d1 * p + d2 * q;
        }
        self.alpha[i1] = new_a1;
        self.alpha[i2] = new_a2;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Minimizes the primal `|w|^2 / 2 + C * sum(hinge)` for 2D data by
    /// zooming grid search over `w`; for a fixed `w` the best `b` is one of
    /// the hinge breakpoints.
    fn primal_oracle(x: &[f64], y: &[f64], c: f64) -> f64 {
        let n = y.len();
        let hinge_min = |w: [f64; 2]| -> f64 {
            (0..n)
                .map(|k| y[k] - (w[0] * x[2 * k] + w[1] * x[2 * k + 1]))
                .map(|b| {
                    (0..n)
                        .map(|i| {
                            let f = w[0] * x[2 * i] + w[1] * x[2 * i + 1] + b;
                            (1.0 - y[i] * f).max(0.0)
                        })
                        .sum::<f64>()
                })
                .fold(f64::INFINITY, f64::min)
        };
        let obj = |w: [f64; 2]| 0.5 * (w[0] * w[0] + w[1] * w[1]) + c * hinge_min(w);
        let (mut centre, mut half) = ([0.0, 0.0], 20.0);
        let mut best = obj(centre);
        for _ in 0..40 {
            let steps = 40;
            for i in 0..=steps {
                for j in 0..=steps {
                    let w = [
                        centre[0] - half + 2.0 * half * i as f64 / steps as f64,
                        centre[1] - half + 2.0 * half * j as f64 / steps as f64,
                    ];
                    let v = obj(w);
                    if v < best {
                        best = v;
                        centre = w;
                    }
                }
            }
            half *= 0.5;
        }
        best
    }

    #[test]
    fn separable_toy_set_is_fit_exactly() {
        let genuine = vec![vec![0.1, 0.2], vec![0.0, 0.0], vec![0.3, 0.1], vec![0.2, 0.3]];
        let impostor = vec![vec![2.0, 2.1], vec![2.5, 1.8], vec![3.0, 3.0], vec![1.9, 2.6]];
        let fit = train_svm(&genuine, &impostor, &SmoConfig::default(), 1).unwrap();
        assert!(fit.warning.is_none());
        assert!(genuine.iter().all(|v| fit.svm.decision(v) < 0.0));
        assert!(impostor.iter().all(|v| fit.svm.decision(v) > 0.0));
    }

    #[test]
    fn dual_matches_primal_on_overlapping_data() {
        let mut r = rng::rng(3);
        for trial in 0..20 {
            let n = 4 + trial % 3;
            let x: Vec<f64> = (0..2 * n).map(|_| r.random_range(-2.0..2.0)).collect();
            let mut y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
            y[0] = 1.0;
            y[1] = -1.0;
            let cfg = SmoConfig::default();
            let fit = train_labeled(&x, 2, &y, &cfg, trial as u64).unwrap();
            let dual = dual_objective(&x, 2, &y, &fit.alphas);
            let primal = primal_oracle(&x, &y, cfg.c);
            assert!((dual - primal).abs() < 1e-4, "trial {trial}: {dual} vs {primal}");
        }
    }

    #[test]
    fn identical_classes_degenerate() {
        let pts = vec![vec![1.0, 2.0], vec![0.5, -1.0], vec![2.0, 0.0]];
        let fit = train_svm(&pts, &pts, &SmoConfig::default(), 0).unwrap();
        assert!(matches!(fit.warning, Some(SvmWarning::Degenerate { .. })));
        let scores: Vec<f64> = pts.iter().map(|p| fit.svm.decision(p)).collect();
        assert!(scores.iter().all(|s| (s - scores[0]).abs() < 1e-12));
    }

    #[test]
    fn empty_class_is_rejected() {
        let err = train_svm(&[vec![1.0]], &[], &SmoConfig::default(), 0);
        assert!(matches!(err, Err(Error::InsufficientTrainingData(_))));
    }

    #[test]
    fn pass_budget_is_enforced() {
        let genuine = vec![vec![0.0, 0.0], vec![0.2, 0.1]];
        let impostor = vec![vec![0.1, 0.05], vec![0.3, 0.3]];
        let cfg = SmoConfig {
            max_passes: 1,
            ..Default::default()
        };
        assert!(matches!(
            train_svm(&genuine, &impostor, &cfg, 0),
            Err(Error::Convergence { passes: 1 })
        ));
    }

    #[test]
    fn training_is_deterministic() {
        let mut r = rng::rng(11);
        let genuine: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![r.random_range(0.0..1.0), r.random_range(0.0..1.0)])
            .collect();
        let impostor: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![r.random_range(0.5..1.5), r.random_range(0.5..1.5)])
            .collect();
        let a = train_svm(&genuine, &impostor, &SmoConfig::default(), 4).unwrap();
        let b = train_svm(&genuine, &impostor, &SmoConfig::default(), 4).unwrap();
        assert_eq!(a.svm, b.svm);
    }
}
