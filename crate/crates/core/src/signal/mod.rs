//! Raw trajectories, preprocessed signals and the preprocessing pipeline.

mod filter;
mod io;
mod kinematics;
mod preprocess;

pub use filter::{lowpass_zero_phase, Biquad};
pub use io::{
    format_signal, format_trajectory, parse_signal, parse_trajectory, read_signal, read_trajectory, write_signal,
    write_trajectory,
};
pub use kinematics::derive_kinematics;
pub use preprocess::{
    normalize_posture, prepare, preprocess, resample_linear, trim_bounds, zscore, PreprocessConfig, Preprocessed,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Rate every preprocessed signal is resampled to.
pub const TARGET_RATE_HZ: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeviceKind {
    /// 2D pointer (mouse, pen, touch) used by the browser client.
    Pointer2d,
    /// 3D fingertip positions from a depth camera.
    Camera3d,
    /// Samples are already sensor axes; no kinematics are derived.
    Precomputed,
}

/// Timestamped positions as delivered by a capture device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTrajectory {
    pub device: DeviceKind,
    /// Seconds, strictly increasing.
    pub times: Vec<f64>,
    /// One row per timestamp.
    pub points: Matrix,
}

impl RawTrajectory {
    pub fn new(device: DeviceKind, times: Vec<f64>, points: Matrix) -> Result<Self> {
        let t = Self { device, times, points };
        t.validate()?;
        Ok(t)
    }

    /// Builds a trajectory whose device kind is inferred from the point width.
    pub fn from_points(times: Vec<f64>, points: Matrix) -> Result<Self> {
        let device = match points.cols() {
            2 => DeviceKind::Pointer2d,
            3 => DeviceKind::Camera3d,
            _ => DeviceKind::Precomputed,
        };
        Self::new(device, times, points)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.points.cols()
    }

    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.points.rows() {
            return Err(Error::Malformed(format!(
                "{} timestamps for {} points",
                self.times.len(),
                self.points.rows()
            )));
        }
        match self.device {
            DeviceKind::Pointer2d if self.dims() != 2 => {
                return Err(Error::Malformed(format!(
                    "pointer2d trajectory has {} coordinates",
                    self.dims()
                )))
            }
            DeviceKind::Camera3d if self.dims() != 3 => {
                return Err(Error::Malformed(format!(
                    "camera3d trajectory has {} coordinates",
                    self.dims()
                )))
            }
            _ => {}
        }
        if self.dims() == 0 {
            return Err(Error::Malformed("trajectory has no coordinates".into()));
        }
        if !self.points.is_finite() || self.times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Malformed("non-finite value in trajectory".into()));
        }
        if let Some(i) = self.times.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::Malformed(format!(
                "timestamps not strictly increasing at index {}",
                i + 1
            )));
        }
        Ok(())
    }
}

/// An `l x d` series of sensor samples at a fixed rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    samples: Matrix,
    rate: f64,
    axes: Vec<String>,
}

impl Signal {
    pub fn new(samples: Matrix, rate: f64, axes: Vec<String>) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::Degenerate(format!(
                "signal shape {}x{}",
                samples.rows(),
                samples.cols()
            )));
        }
        if axes.len() != samples.cols() {
            return Err(Error::Malformed(format!(
                "{} axis labels for {} columns",
                axes.len(),
                samples.cols()
            )));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::Malformed(format!("invalid sample rate {rate}")));
        }
        if !samples.is_finite() {
            return Err(Error::Malformed("non-finite sample".into()));
        }
        Ok(Self { samples, rate, axes })
    }

    /// Signal with generic `ch<i>` axis labels.
    pub fn unlabeled(samples: Matrix, rate: f64) -> Result<Self> {
        let axes = (0..samples.cols()).map(|j| format!("ch{j}")).collect();
        Self::new(samples, rate, axes)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    #[inline]
    pub fn dims(&self) -> usize {
        self.samples.cols()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn axes(&self) -> &[String] {
        &self.axes
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        self.samples.row(i)
    }

    pub fn into_samples(self) -> Matrix {
        self.samples
    }

    /// Same axes and rate, new samples.
    pub fn with_samples(&self, samples: Matrix) -> Result<Self> {
        Self::new(samples, self.rate, self.axes.clone())
    }

    /// Shape and rate compatibility check used before alignment.
    pub fn check_compatible(&self, other: &Signal) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::Incompatible(format!(
                "axis count {} vs {}",
                self.dims(),
                other.dims()
            )));
        }
        if (self.rate - other.rate).abs() > 1e-9 * self.rate.max(other.rate) {
            return Err(Error::Incompatible(format!("rate {} vs {}", self.rate, other.rate)));
        }
        Ok(())
    }

    /// Index of the axis with the given label.
    pub fn axis_index(&self, label: &str) -> Option<usize> {
        self.axes.iter().position(|a| a == label)
    }

    /// Column indices of a spatial vector group such as `pos` or `vel`,
    /// in x, y, z order. Empty when the group is absent.
    pub fn spatial_group(&self, prefix: &str) -> Vec<usize> {
        ["x", "y", "z"]
            .iter()
            .map_while(|c| self.axis_index(&format!("{prefix}_{c}")))
            .collect()
    }
}
