use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::signal::Signal;

use super::dtw::{dtw_align, DtwConfig};

/// Smallest deviation used when the template's spread serves as a sampling
/// scale.
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Aligned mean and per-sample, per-axis deviation of the registration
/// signals of one account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub mean: Matrix,
    pub sigma: Matrix,
    /// Number of registration signals the template was built from.
    pub k: usize,
    pub rate: f64,
    pub axes: Vec<String>,
}

impl Template {
    pub fn len(&self) -> usize {
        self.mean.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.mean.cols()
    }

    /// The mean as a signal, the reference every request is aligned to.
    pub fn as_signal(&self) -> Result<Signal> {
        Signal::new(self.mean.clone(), self.rate, self.axes.clone())
    }

    /// Deviation clamped below at [`SIGMA_FLOOR`].
    #[inline]
    pub fn sampling_sigma(&self, i: usize, j: usize) -> f64 {
        self.sigma.get(i, j).max(SIGMA_FLOOR)
    }
}

/// Aligns every registration signal to the first and takes the element-wise
/// mean and unbiased standard deviation. A single signal yields a zero
/// deviation.
pub fn build_template(signals: &[Signal], cfg: &DtwConfig) -> Result<Template> {
    let first = signals.first().ok_or(Error::EmptyRegistration)?;
    let aligned = signals
        .iter()
        .map(|s| {
            if std::ptr::eq(s, first) {
                Ok(first.samples().clone())
            } else {
                dtw_align(s, first, cfg).map(|a| a.samples.into_samples())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(template_from_aligned(&aligned, first))
}

/// Mean and unbiased deviation of signals that already share a time axis.
/// Values are summed in sorted order per element, so the result does not
/// depend on the order of `aligned`.
pub(crate) fn template_from_aligned(aligned: &[Matrix], reference: &Signal) -> Template {
    let k = aligned.len();
    let (n, d) = (reference.len(), reference.dims());
    let mut mean = Matrix::zeros(n, d);
    let mut sigma = Matrix::zeros(n, d);
    let mut column = vec![0.0; k];
    for e in 0..n * d {
        for (c, a) in column.iter_mut().zip(aligned) {
            *c = a.as_slice()[e];
        }
        column.sort_by(f64::total_cmp);
        if column[0] == column[k - 1] {
            mean.as_mut_slice()[e] = column[0];
            continue;
        }
        let m = column.iter().sum::<f64>() / k as f64;
        mean.as_mut_slice()[e] = m;
        if k > 1 {
            let mut dev: Vec<f64> = column.iter().map(|v| (v - m) * (v - m)).collect();
            dev.sort_by(f64::total_cmp);
            sigma.as_mut_slice()[e] = (dev.iter().sum::<f64>() / (k - 1) as f64).sqrt();
        }
    }
    Template {
        mean,
        sigma,
        k,
        rate: reference.rate(),
        axes: reference.axes().to_vec(),
    }
}

/// Moves the mean toward a new signal already aligned to the template:
/// `mean' = (1 - lambda) * mean + lambda * new`. The deviation is kept.
pub fn update_template(tmpl: &Template, new_aligned: &Signal, lambda: f64) -> Result<Template> {
    if new_aligned.len() != tmpl.len() || new_aligned.dims() != tmpl.dims() {
        return Err(Error::Incompatible(format!(
            "update signal {}x{} vs template {}x{}",
            new_aligned.len(),
            new_aligned.dims(),
            tmpl.len(),
            tmpl.dims()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::Validation(format!("update factor {lambda} outside [0, 1]")));
    }
    let mut out = tmpl.clone();
    for (m, v) in out.mean.as_mut_slice().iter_mut().zip(new_aligned.samples().as_slice()) {
        *m = (1.0 - lambda) * *m + lambda * v;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sig(rows: Vec<[f64; 2]>) -> Signal {
        Signal::unlabeled(Matrix::from_rows(&rows), 50.0).unwrap()
    }

    #[test]
    fn identical_signals_have_zero_deviation() {
        let s = sig(vec![[0.1, 1.3], [2.7, -1.1], [0.5, 0.2]]);
        let t = build_template(&vec![s.clone(); 3], &DtwConfig::default()).unwrap();
        assert_eq!(t.mean, *s.samples());
        assert!(t.sigma.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t.k, 3);
    }

    #[test]
    fn two_point_deviation() {
        let eps = 0.3;
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let mut b = a.clone();
        b.set(1, 0, 3.0 + eps);
        let reference = Signal::unlabeled(a.clone(), 50.0).unwrap();
        let t = template_from_aligned(&[a, b], &reference);
        assert!((t.mean.get(1, 0) - (3.0 + eps / 2.0)).abs() < 1e-12);
        assert!((t.sigma.get(1, 0) - eps / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.sigma.get(0, 0), 0.0);
    }

    #[test]
    fn single_signal_template() {
        let s = sig(vec![[0.0, 1.0], [2.0, -1.0]]);
        let t = build_template(std::slice::from_ref(&s), &DtwConfig::default()).unwrap();
        assert_eq!(t.k, 1);
        assert!(t.sigma.as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(t.sampling_sigma(0, 0), SIGMA_FLOOR);
    }

    #[test]
    fn empty_registration_errors() {
        assert!(matches!(
            build_template(&[], &DtwConfig::default()),
            Err(Error::EmptyRegistration)
        ));
    }

    #[test]
    fn update_endpoints_and_default_factor() {
        let t = build_template(&[sig(vec![[1.0, 1.0], [1.0, 1.0]])], &DtwConfig::default()).unwrap();
        let new = sig(vec![[2.0, 2.0], [2.0, 2.0]]);
        assert_eq!(update_template(&t, &new, 0.0).unwrap(), t);
        assert_eq!(update_template(&t, &new, 1.0).unwrap().mean, *new.samples());
        let u = update_template(&t, &new, 0.1).unwrap();
        assert!((u.mean.get(0, 0) - 1.1).abs() < 1e-15);
        let short = sig(vec![[2.0, 2.0]]);
        assert!(matches!(update_template(&t, &short, 0.1), Err(Error::Incompatible(_))));
    }

    proptest! {
        #[test]
        fn mutually_aligned_inputs_are_order_invariant(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 6), 3..6),
        ) {
            let mats: Vec<Matrix> = rows.iter().map(|r| Matrix::from_vec(3, 2, r.clone())).collect();
            let reference = Signal::unlabeled(mats[0].clone(), 50.0).unwrap();
            let fwd = template_from_aligned(&mats, &reference);
            let mut rev = mats.clone();
            rev.reverse();
            let back = template_from_aligned(&rev, &reference);
            prop_assert_eq!(fwd, back);
        }

        #[test]
        fn updates_compose_affinely(l1 in 0.0f64..1.0, l2 in 0.0f64..1.0, base in -3.0f64..3.0, new in -3.0f64..3.0) {
            let t = build_template(&[sig(vec![[base, -base]])], &DtwConfig::default()).unwrap();
            let s = sig(vec![[new, 2.0 * new]]);
            let twice = update_template(&update_template(&t, &s, l1).unwrap(), &s, l2).unwrap();
            let once = update_template(&t, &s, 1.0 - (1.0 - l1) * (1.0 - l2)).unwrap();
            for (a, b) in twice.mean.as_slice().iter().zip(once.mean.as_slice()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
