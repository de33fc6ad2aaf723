//! Reference implementations that the production code is checked against.
//! They favour obviousness over speed.

#![allow(dead_code)]

use airsign_core::ident::{CnnArch, ConvSpec, Network};
use airsign_core::{Matrix, Signal};

pub fn signal(rows: &[Vec<f64>]) -> Signal {
    Signal::unlabeled(Matrix::from_rows(rows), 50.0).unwrap()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum path cost over every monotone warping path, found by walking
/// all of them.
pub fn brute_force_dtw(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    fn walk(a: &[Vec<f64>], b: &[Vec<f64>], i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + euclid(&a[i], &b[j]);
        if i + 1 == a.len() && j + 1 == b.len() {
            *best = best.min(acc);
            return;
        }
        if i + 1 < a.len() {
            walk(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.len() {
            walk(a, b, i, j + 1, acc, best);
        }
        if i + 1 < a.len() && j + 1 < b.len() {
            walk(a, b, i + 1, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(a, b, 0, 0, 0.0, &mut best);
    best
}

/// Minimizes a convex function of one variable on `[lo, hi]`.
fn ternary(mut lo: f64, mut hi: f64, iters: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    for _ in 0..iters {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) <= f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    f(0.5 * (lo + hi))
}

/// Optimal value of the soft-margin linear SVM on 2D points, found by
/// nested ternary search over `(b, w1, w2)` of the convex primal
/// `|w|^2 / 2 + C sum hinge`. By strong duality this equals the maximum of
/// the dual.
pub fn svm_optimum_2d(x: &[[f64; 2]], y: &[f64], c: f64) -> f64 {
    let n = x.len() as f64;
    let wmax = (2.0 * c * n).sqrt() + 1e-9;
    let xmax = x.iter().map(|p| p[0].hypot(p[1])).fold(0.0, f64::max);
    let bmax = 1.0 + wmax * xmax + 1.0;
    let primal = |w1: f64, w2: f64, b: f64| {
        let hinge: f64 = x
            .iter()
            .zip(y)
            .map(|(p, &yi)| (1.0 - yi * (w1 * p[0] + w2 * p[1] + b)).max(0.0))
            .sum();
        0.5 * (w1 * w1 + w2 * w2) + c * hinge
    };
    let it = 90;
    ternary(-bmax, bmax, it, |b| {
        ternary(-wmax, wmax, it, |w1| ternary(-wmax, wmax, it, |w2| primal(w1, w2, b)))
    })
}

/// A network small enough for an exhaustive finite-difference check that
/// still has both layer kinds.
pub fn mini_network() -> Network {
    Network::new(CnnArch {
        input_len: 16,
        in_channels: 2,
        kernel: 3,
        conv: vec![
            ConvSpec::Depthwise { multiplier: 2 },
            ConvSpec::Separable { out_channels: 5 },
        ],
        embedding: 6,
        classes: 3,
    })
    .unwrap()
}

/// Worst relative error between the analytic gradient and central
/// differences of the total loss, over every parameter.
pub fn gradient_check(net: &Network, seed: u64) -> f64 {
    use rand::Rng;
    let mut r = airsign_core::rng::rng(seed);
    let p = net.init_params(&mut r);
    let batch = 3;
    let arch = &net.arch;
    let x: Vec<f64> = (0..batch * arch.input_len * arch.in_channels)
        .map(|_| r.random_range(-2.0..2.0))
        .collect();
    let ys: Vec<usize> = (0..batch).map(|i| i % arch.classes).collect();
    let centers: Vec<f64> = (0..arch.classes * arch.embedding)
        .map(|_| r.random_range(-1.0..1.0))
        .collect();
    let mask: Vec<f64> = (0..batch * arch.embedding)
        .map(|i| if i % 4 == 1 { 0.0 } else { 2.0 })
        .collect();
    let cw = 0.1;
    let loss = |q: &[f64]| {
        net.loss(&net.forward(q, &x, batch, Some(mask.clone())), &ys, &centers, cw)
            .total
    };
    let g = net.backward(&p, &net.forward(&p, &x, batch, Some(mask.clone())), &ys, &centers, cw);
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut q = p.clone();
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let up = loss(&q);
        q[i] = p[i] - h;
        let down = loss(&q);
        q[i] = p[i];
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
    }
    worst
}

/// FAR and FRR at `threshold` counted by hand: genuine scores at or above
/// the threshold are false rejects, impostor scores below it false accepts.
pub fn hand_rates(genuine: &[f64], impostor: &[f64], threshold: f64) -> (f64, f64) {
    let fr = genuine.iter().filter(|&&s| s >= threshold).count();
    let fa = impostor.iter().filter(|&&s| s < threshold).count();
    (fa as f64 / impostor.len() as f64, fr as f64 / genuine.len() as f64)
}
