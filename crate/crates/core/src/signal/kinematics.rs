use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::{DeviceKind, RawTrajectory, Signal};

const COMPONENTS: [&str; 3] = ["x", "y", "z"];

/// Turns a position trajectory into a position/velocity/acceleration signal.
///
/// Velocity at sample `i` is the forward difference `(p[i+1] - p[i]) / dt`,
/// acceleration at sample `i` is the second difference centred on `i`. Ends
/// with no difference available replicate the nearest computed value, so the
/// output has the same length as the input. The rate is the median of the
/// per-step rates.
///
/// Precomputed trajectories pass through as `ch<i>` axes.
pub fn derive_kinematics(raw: &RawTrajectory) -> Result<Signal> {
    if raw.len() < 2 {
        return Err(Error::Degenerate(format!(
            "trajectory has {} point(s), need at least 2",
            raw.len()
        )));
    }
    raw.validate()?;

    let n = raw.len();
    let rate = median_rate(&raw.times);

    if raw.device == DeviceKind::Precomputed {
        return Signal::unlabeled(raw.points.clone(), rate);
    }

    let k = raw.dims();
    let p = &raw.points;
    let t = &raw.times;

    let mut vel = Matrix::zeros(n, k);
    for i in 0..n - 1 {
        let dt = t[i + 1] - t[i];
        for j in 0..k {
            vel.set(i, j, (p.get(i + 1, j) - p.get(i, j)) / dt);
        }
    }
    for j in 0..k {
        vel.set(n - 1, j, vel.get(n - 2, j));
    }

    let mut acc = Matrix::zeros(n, k);
    if n >= 3 {
        for i in 1..n - 1 {
            let half_span = 0.5 * (t[i + 1] - t[i - 1]);
            for j in 0..k {
                acc.set(i, j, (vel.get(i, j) - vel.get(i - 1, j)) / half_span);
            }
        }
        for j in 0..k {
            acc.set(0, j, acc.get(1, j));
            acc.set(n - 1, j, acc.get(n - 2, j));
        }
    }

    let d = 3 * k;
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let row = out.row_mut(i);
        row[..k].copy_from_slice(p.row(i));
        row[k..2 * k].copy_from_slice(vel.row(i));
        row[2 * k..].copy_from_slice(acc.row(i));
    }
    let axes = ["pos", "vel", "acc"]
        .iter()
        .flat_map(|g| COMPONENTS[..k].iter().map(move |c| format!("{g}_{c}")))
        .collect();
    Signal::new(out, rate, axes)
}

fn median_rate(times: &[f64]) -> f64 {
    let mut rates: Vec<f64> = times.windows(2).map(|w| 1.0 / (w[1] - w[0])).collect();
    rates.sort_by(f64::total_cmp);
    let m = rates.len();
    if m % 2 == 1 {
        rates[m / 2]
    } else {
        0.5 * (rates[m / 2 - 1] + rates[m / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize, rate: f64, f: impl Fn(f64) -> [f64; 2]) -> RawTrajectory {
        let times: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let rows: Vec<[f64; 2]> = times.iter().map(|&t| f(t)).collect();
        RawTrajectory::new(DeviceKind::Pointer2d, times, Matrix::from_rows(&rows)).unwrap()
    }

    #[test]
    fn stationary_point_has_zero_derivatives() {
        let sig = derive_kinematics(&uniform(10, 50.0, |_| [3.0, -1.0])).unwrap();
        assert_eq!(sig.dims(), 6);
        assert_eq!(sig.len(), 10);
        for row in sig.samples().iter_rows() {
            assert_eq!(&row[2..], &[0.0; 4]);
        }
        assert!((sig.rate() - 50.0).abs() < 1e-9);
    }

    #[test]
    fn linear_motion_has_unit_velocity() {
        let sig = derive_kinematics(&uniform(25, 50.0, |t| [t, 0.0])).unwrap();
        let vx = sig.axis_index("vel_x").unwrap();
        let ax = sig.axis_index("acc_x").unwrap();
        for i in 0..sig.len() {
            assert!((sig.samples().get(i, vx) - 1.0).abs() < 1e-9);
            assert!(sig.samples().get(i, ax).abs() < 1e-6);
        }
    }

    #[test]
    fn quadratic_motion_has_constant_acceleration() {
        // x = t^2: second difference is exact for quadratics.
        let sig = derive_kinematics(&uniform(30, 50.0, |t| [t * t, 0.0])).unwrap();
        let ax = sig.axis_index("acc_x").unwrap();
        for i in 0..sig.len() {
            assert!((sig.samples().get(i, ax) - 2.0).abs() < 1e-6, "row {i}");
        }
    }

    #[test]
    fn single_point_is_degenerate() {
        let raw = RawTrajectory::new(DeviceKind::Pointer2d, vec![0.0], Matrix::from_rows(&[[1.0, 2.0]])).unwrap();
        assert!(matches!(derive_kinematics(&raw), Err(Error::Degenerate(_))));
    }

    #[test]
    fn non_increasing_timestamps_are_malformed() {
        let pts = Matrix::from_rows(&[[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]);
        let err = RawTrajectory::new(DeviceKind::Pointer2d, vec![0.0, 0.1, 0.1], pts);
        assert!(matches!(err, Err(Error::Malformed(_))));
    }

    #[test]
    fn velocity_integrates_back_to_position() {
        let raw = uniform(40, 60.0, |t| [(3.0 * t).sin(), t * t * t]);
        let sig = derive_kinematics(&raw).unwrap();
        let dt = 1.0 / 60.0;
        for i in 0..sig.len() - 1 {
            for j in 0..2 {
                let delta = raw.points.get(i + 1, j) - raw.points.get(i, j);
                let integrated = sig.samples().get(i, 2 + j) * dt;
                assert!((delta - integrated).abs() < 1e-6);
            }
        }
    }
}
