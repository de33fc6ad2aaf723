use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::matrix::Matrix;
use crate::signal::Signal;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtwConfig {
    /// Sakoe-Chiba radius around the length-scaled diagonal. `None` is
    /// unconstrained.
    pub band: Option<usize>,
}

/// A query warped onto the time axis of a reference.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSignal {
    /// Same length as the reference.
    pub samples: Signal,
    /// `(reference_index, query_index)` pairs from `(0, 0)` to the last
    /// sample of both.
    pub warp_path: Vec<(usize, usize)>,
    /// Total Euclidean cost along the path.
    pub distance: f64,
}

/// Column range of row `i` (1-based) allowed by the band.
#[inline]
fn band_range(i: usize, n: usize, m: usize, band: Option<usize>) -> (usize, usize) {
    match band {
        None => (1, m),
        Some(r) => {
            let centre = (i as f64 * m as f64 / n as f64).round() as isize;
            let r = r.max(1) as isize;
            let lo = (centre - r).max(1) as usize;
            let hi = ((centre + r) as usize).min(m);
            (lo, hi.max(lo))
        }
    }
}

/// Query stored axis-major so a whole row of local costs vectorizes.
struct Columns {
    m: usize,
    data: Vec<f64>,
}

impl Columns {
    fn new(query: &Matrix) -> Self {
        let (m, d) = (query.rows(), query.cols());
        let mut data = vec![0.0; m * d];
        for (j, row) in query.iter_rows().enumerate() {
            for (k, v) in row.iter().enumerate() {
                data[k * m + j] = *v;
            }
        }
        Self { m, data }
    }

    /// Euclidean distances from `r` to query samples `lo..hi` (0-based).
    fn costs(&self, r: &[f64], lo: usize, hi: usize, out: &mut [f64]) {
        let out = &mut out[lo..hi];
        out.fill(0.0);
        for (k, &rk) in r.iter().enumerate() {
            let col = &self.data[k * self.m + lo..k * self.m + hi];
            for (o, q) in out.iter_mut().zip(col) {
                let t = rk - q;
                *o += t * t;
            }
        }
        out.iter_mut().for_each(|v| *v = v.sqrt());
    }
}

/// Accumulated cost matrix with a zero origin at `[0][0]`.
fn accumulate(reference: &Matrix, query: &Matrix, band: Option<usize>) -> Vec<f64> {
    let (n, m) = (reference.rows(), query.rows());
    let w = m + 1;
    let cols = Columns::new(query);
    let mut cost = vec![0.0; m];
    let mut acc = vec![f64::INFINITY; (n + 1) * w];
    acc[0] = 0.0;
    for i in 1..=n {
        let (lo, hi) = band_range(i, n, m, band);
        cols.costs(reference.row(i - 1), lo - 1, hi, &mut cost);
        let (prev, cur) = acc[(i - 1) * w..(i + 1) * w].split_at_mut(w);
        for j in lo..=hi {
            cur[j] = prev[j - 1].min(prev[j]).min(cur[j - 1]) + cost[j - 1];
        }
    }
    acc
}

/// DTW of `query` onto `reference` with steps `{(1,0), (0,1), (1,1)}`.
///
/// Query samples mapped to the same reference index are averaged, so the
/// aligned output always has the reference's length.
pub fn dtw_align(query: &Signal, reference: &Signal, cfg: &DtwConfig) -> Result<AlignedSignal> {
    query.check_compatible(reference)?;
    let (n, m) = (reference.len(), query.len());
    let w = m + 1;
    let acc = accumulate(reference.samples(), query.samples(), cfg.band);

    let mut path = Vec::with_capacity(n + m);
    let (mut i, mut j) = (n, m);
    loop {
        path.push((i - 1, j - 1));
        if i == 1 && j == 1 {
            break;
        }
        let diag = acc[(i - 1) * w + j - 1];
        let up = acc[(i - 1) * w + j];
        let left = acc[i * w + j - 1];
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    path.reverse();

    let d = reference.dims();
    let mut out = Matrix::zeros(n, d);
    let mut counts = vec![0usize; n];
    for &(ri, qi) in &path {
        counts[ri] += 1;
        for (o, q) in out.row_mut(ri).iter_mut().zip(query.row(qi)) {
            *o += q;
        }
    }
    for (ri, &c) in counts.iter().enumerate() {
        if c > 1 {
            let inv = 1.0 / c as f64;
            out.row_mut(ri).iter_mut().for_each(|v| *v *= inv);
        }
    }

    Ok(AlignedSignal {
        samples: reference.with_samples(out)?,
        warp_path: path,
        distance: acc[n * w + m],
    })
}

/// DTW cost only, in `O(min)` memory.
pub fn dtw_distance(a: &Signal, b: &Signal, cfg: &DtwConfig) -> Result<f64> {
    a.check_compatible(b)?;
    let (reference, query) = (a.samples(), b.samples());
    let (n, m) = (reference.rows(), query.rows());
    let cols = Columns::new(query);
    let mut cost = vec![0.0; m];
    let mut prev = vec![f64::INFINITY; m + 1];
    let mut cur = vec![f64::INFINITY; m + 1];
    prev[0] = 0.0;
    for i in 1..=n {
        cur.fill(f64::INFINITY);
        let (lo, hi) = band_range(i, n, m, cfg.band);
        cols.costs(reference.row(i - 1), lo - 1, hi, &mut cost);
        for j in lo..=hi {
            cur[j] = prev[j - 1].min(prev[j]).min(cur[j - 1]) + cost[j - 1];
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[m])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn sig(rows: &[[f64; 2]]) -> Signal {
        Signal::unlabeled(Matrix::from_rows(rows), 50.0).unwrap()
    }

    #[test]
    fn self_alignment_is_diagonal_and_free() {
        let s = sig(&[[0.0, 1.0], [1.0, 2.0], [3.0, -1.0], [2.0, 0.5]]);
        let a = dtw_align(&s, &s, &DtwConfig::default()).unwrap();
        assert_eq!(a.distance, 0.0);
        assert_eq!(a.warp_path, vec![(0, 0), (1, 1), (2, 2), (3, 3)]);
        assert_eq!(a.samples, s);
    }

    #[test]
    fn uniform_stretch_costs_nothing() {
        let base = [[0.0, 1.0], [1.0, 2.0], [3.0, -1.0], [2.0, 0.5], [-1.0, 0.0]];
        let stretched: Vec<[f64; 2]> = base.iter().flat_map(|r| [*r, *r]).collect();
        let (b, s) = (sig(&base), sig(&stretched));
        let a = dtw_align(&s, &b, &DtwConfig::default()).unwrap();
        assert_eq!(a.distance, 0.0);
        assert_eq!(a.samples, b);
        assert_eq!(dtw_distance(&b, &s, &DtwConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn path_is_monotone_and_anchored() {
        let a = sig(&[[0.0, 0.0], [2.0, 1.0], [1.0, 1.0], [5.0, 0.0], [0.0, 3.0], [1.0, 1.0]]);
        let b = sig(&[[1.0, 0.0], [0.0, 2.0], [4.0, 4.0]]);
        let al = dtw_align(&a, &b, &DtwConfig::default()).unwrap();
        assert_eq!(al.warp_path.first(), Some(&(0, 0)));
        assert_eq!(al.warp_path.last(), Some(&(2, 5)));
        for w in al.warp_path.windows(2) {
            let (di, dj) = (w[1].0 - w[0].0, w[1].1 - w[0].1);
            assert!(matches!((di, dj), (1, 0) | (0, 1) | (1, 1)));
        }
        assert_eq!(al.samples.len(), 3);
        let plain = dtw_distance(&b, &a, &DtwConfig::default()).unwrap();
        assert!((plain - al.distance).abs() < 1e-12);
    }

    #[test]
    fn wide_band_matches_unconstrained() {
        let a = sig(&[[0.0, 0.0], [2.0, 1.0], [1.0, 1.0], [5.0, 0.0], [0.0, 3.0]]);
        let b = sig(&[[1.0, 0.0], [0.0, 2.0], [4.0, 4.0], [1.0, 1.0]]);
        let free = dtw_distance(&a, &b, &DtwConfig::default()).unwrap();
        let banded = dtw_distance(&a, &b, &DtwConfig { band: Some(10) }).unwrap();
        assert_eq!(free, banded);
        let narrow = dtw_distance(&a, &b, &DtwConfig { band: Some(1) }).unwrap();
        assert!(narrow >= free && narrow.is_finite());
    }

    #[test]
    fn axis_mismatch_is_incompatible() {
        let a = sig(&[[0.0, 0.0], [1.0, 1.0]]);
        let b = Signal::unlabeled(Matrix::from_rows(&[[0.0], [1.0]]), 50.0).unwrap();
        assert!(matches!(
            dtw_align(&a, &b, &DtwConfig::default()),
            Err(Error::Incompatible(_))
        ));
    }
}
