//! Temporal local distance features.
//!
//! A request aligned to a template gives an element-wise distance series.
//! The series is cut into `H` contiguous windows; a feature vector picks one
//! row from each of `T` selected windows and concatenates them, so its length
//! is `T * d`.

use std::ops::Range;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::align::Template;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng;
use crate::signal::Signal;

/// `|aligned - template.mean|` with the template deviation alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceSeries {
    pub values: Matrix,
    pub sigma: Matrix,
}

impl DistanceSeries {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.values.cols()
    }
}

/// `T` distinct window indices out of `H`, sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSet {
    pub h: usize,
    pub indices: Vec<usize>,
}

impl WindowSet {
    pub fn new(h: usize, mut indices: Vec<usize>) -> Result<Self> {
        indices.sort_unstable();
        let distinct = indices.windows(2).all(|w| w[0] < w[1]);
        if !distinct || indices.last().is_some_and(|&i| i >= h) || indices.is_empty() {
            return Err(Error::Validation(format!("invalid window set {indices:?} for H={h}")));
        }
        Ok(Self { h, indices })
    }

    /// Uniformly random `t`-subset of `0..h`.
    pub fn random<R: Rng>(h: usize, t: usize, rng: &mut R) -> Result<Self> {
        if t == 0 || t > h {
            return Err(Error::Validation(format!("cannot pick T={t} of H={h} windows")));
        }
        Self::new(h, index::sample(rng, h, t).into_vec())
    }

    pub fn t(&self) -> usize {
        self.indices.len()
    }
}

/// Element-wise distance between an aligned request and the template mean.
pub fn local_distance(aligned: &Signal, tmpl: &Template) -> Result<DistanceSeries> {
    if aligned.len() != tmpl.len() || aligned.dims() != tmpl.dims() {
        return Err(Error::Incompatible(format!(
            "aligned signal {}x{} vs template {}x{}",
            aligned.len(),
            aligned.dims(),
            tmpl.len(),
            tmpl.dims()
        )));
    }
    let values: Vec<f64> = aligned
        .samples()
        .as_slice()
        .iter()
        .zip(tmpl.mean.as_slice())
        .map(|(s, t)| (s - t).abs())
        .collect();
    Ok(DistanceSeries {
        values: Matrix::from_vec(tmpl.len(), tmpl.dims(), values),
        sigma: tmpl.sigma.clone(),
    })
}

/// Splits `len` rows into `h` contiguous windows. The first `len % h`
/// windows get one extra row.
pub fn partition_windows(len: usize, h: usize) -> Result<Vec<Range<usize>>> {
    if h == 0 {
        return Err(Error::Validation("window count must be positive".into()));
    }
    if len < h {
        return Err(Error::TooShort { len, min: h });
    }
    let (base, rem) = (len / h, len % h);
    let mut start = 0;
    Ok((0..h)
        .map(|w| {
            let size = base + usize::from(w < rem);
            let r = start..start + size;
            start += size;
            r
        })
        .collect())
}

/// Draws `count` feature vectors for one window set.
///
/// With `gaussian` set every picked row is perturbed by independent normal
/// noise scaled by the template deviation of that row and clamped at zero.
pub fn sample_feature_vectors(
    ds: &DistanceSeries,
    ws: &WindowSet,
    count: usize,
    gaussian: bool,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    sample_feature_vectors_with(ds, ws, count, gaussian, &mut rng::rng(seed))
}

pub fn sample_feature_vectors_with<R: Rng>(
    ds: &DistanceSeries,
    ws: &WindowSet,
    count: usize,
    gaussian: bool,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let windows = partition_windows(ds.len(), ws.h)?;
    let d = ds.dims();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut x = Vec::with_capacity(ws.t() * d);
        for &w in &ws.indices {
            let range = &windows[w];
            let row = rng.random_range(range.clone());
            let values = ds.values.row(row);
            if gaussian {
                for (j, &v) in values.iter().enumerate() {
                    let scale = ds.sigma.get(row, j).max(crate::align::SIGMA_FLOOR);
                    let z: f64 = StandardNormal.sample(rng);
                    x.push((v + scale * z).max(0.0));
                }
            } else {
                x.extend_from_slice(values);
            }
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::align::{build_template, DtwConfig};

    fn series(values: Vec<f64>, rows: usize, sigma: f64) -> DistanceSeries {
        let cols = values.len() / rows;
        DistanceSeries {
            values: Matrix::from_vec(rows, cols, values),
            sigma: Matrix::from_vec(rows, cols, vec![sigma; rows * cols]),
        }
    }

    #[test]
    fn distance_to_own_mean_is_zero() {
        let s = Signal::unlabeled(Matrix::from_rows(&[[1.0, 2.0], [3.0, 5.0]]), 50.0).unwrap();
        let t = build_template(std::slice::from_ref(&s), &DtwConfig::default()).unwrap();
        let ds = local_distance(&s, &t).unwrap();
        assert!(ds.values.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_is_absolute_difference() {
        let t = build_template(
            &[Signal::unlabeled(Matrix::from_rows(&[[5.0]]), 50.0).unwrap()],
            &DtwConfig::default(),
        )
        .unwrap();
        let s = Signal::unlabeled(Matrix::from_rows(&[[2.0]]), 50.0).unwrap();
        assert_eq!(local_distance(&s, &t).unwrap().values.get(0, 0), 3.0);
    }

    #[test]
    fn windows_cover_with_leading_remainder() {
        let w = partition_windows(10, 5).unwrap();
        assert!(w.iter().all(|r| r.len() == 2));
        let w = partition_windows(10, 3).unwrap();
        assert_eq!(w, vec![0..4, 4..7, 7..10]);
        let w = partition_windows(7, 7).unwrap();
        assert!(w.iter().enumerate().all(|(i, r)| *r == (i..i + 1)));
        assert!(matches!(partition_windows(3, 5), Err(Error::TooShort { .. })));
    }

    #[test]
    fn picks_come_from_selected_windows() {
        // l=10, H=5, T=2 with the third and fifth windows selected.
        let ds = series((0..10).map(|i| i as f64).collect(), 10, 0.0);
        let ws = WindowSet::new(5, vec![4, 2]).unwrap();
        let vs = sample_feature_vectors(&ds, &ws, 200, false, 7).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for v in &vs {
            assert_eq!(v.len(), 2);
            assert!(v[0] == 4.0 || v[0] == 5.0);
            assert!(v[1] == 8.0 || v[1] == 9.0);
            seen.insert((v[0] as i64, v[1] as i64));
        }
        assert!(seen.contains(&(5, 8)));
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn zero_series_gives_zero_vectors() {
        let ds = series(vec![0.0; 30], 10, 0.0);
        let ws = WindowSet::new(5, vec![0, 3]).unwrap();
        for v in sample_feature_vectors(&ds, &ws, 10, false, 1).unwrap() {
            assert_eq!(v, vec![0.0; 6]);
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let ds = series((0..40).map(|i| (i as f64).sin().abs()).collect(), 20, 0.2);
        let ws = WindowSet::new(4, vec![1, 3]).unwrap();
        let a = sample_feature_vectors(&ds, &ws, 16, true, 99).unwrap();
        let b = sample_feature_vectors(&ds, &ws, 16, true, 99).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flatten().all(|&v| v >= 0.0));
    }

    #[test]
    fn gaussian_draws_match_clamped_normal_mean() {
        // One-row windows, so every draw perturbs the same value.
        let (mu, sigma) = (0.3, 0.5);
        let ds = series(vec![mu], 1, sigma);
        let ws = WindowSet::new(1, vec![0]).unwrap();
        let n = 10_000;
        let draws = sample_feature_vectors(&ds, &ws, n, true, 5).unwrap();
        let mean = draws.iter().map(|v| v[0]).sum::<f64>() / n as f64;
        // E[max(0, X)] for X ~ N(mu, sigma^2).
        let a = mu / sigma;
        let phi = (-0.5 * a * a).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = 0.5 * (1.0 + erf(a / std::f64::consts::SQRT_2));
        let expected = mu * cdf + sigma * phi;
        assert!(
            (mean - expected).abs() < 3.0 * sigma / (n as f64).sqrt(),
            "{mean} vs {expected}"
        );
    }

    // Abramowitz-Stegun 7.1.26, |error| < 1.5e-7.
    fn erf(x: f64) -> f64 {
        let t = 1.0 / (1.0 + 0.327_591_1 * x.abs());
        let y = 1.0
            - (((((1.061_405_429 * t - 1.453_152_027) * t) + 1.421_413_741) * t - 0.284_496_736) * t + 0.254_829_592)
                * t
                * (-x * x).exp();
        y.copysign(x)
    }
}
