//! Error rates for score-based verification. A request is accepted when its
//! score is strictly below the threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Accept iff `score < threshold`; may be `+inf`.
    #[serde(with = "inf_as_null")]
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Operating point reads at fixed false-accept rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrrAtFar {
    /// FRR at FAR = 1e-4.
    pub far10k: f64,
    /// FRR at FAR = 1e-5.
    pub far100k: f64,
    /// FRR at the lowest threshold with no observed false accept.
    pub zero_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_genuine: usize,
    pub n_guessing: usize,
    pub n_spoof: usize,
    /// Rates at the equal-error threshold of genuine vs. guessing.
    pub threshold: f64,
    pub frr: f64,
    pub far: f64,
    pub far_spoof: Option<f64>,
    pub eer: f64,
    pub eer_spoof: Option<f64>,
    pub frr_at_far: FrrAtFar,
    pub roc: Vec<RocPoint>,
}

/// Counts of false rejects among `genuine` and false accepts among
/// `impostor` at one threshold.
pub fn error_counts(genuine: &[f64], impostor: &[f64], threshold: f64) -> (usize, usize) {
    let fr = genuine.iter().filter(|&&s| !(s < threshold)).count();
    let fa = impostor.iter().filter(|&&s| s < threshold).count();
    (fr, fa)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Sweeps the threshold over every distinct score and `+inf`. FAR rises and
/// FRR falls along the returned list.
pub fn roc_curve(genuine: &[f64], impostor: &[f64]) -> Result<Vec<RocPoint>> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::InsufficientScores(format!(
            "{} genuine and {} impostor scores",
            genuine.len(),
            impostor.len()
        )));
    }
    if genuine.iter().chain(impostor).any(|s| s.is_nan()) {
        return Err(Error::InsufficientScores("NaN score".into()));
    }
    let g = sorted(genuine);
    let im = sorted(impostor);
    let mut thresholds: Vec<f64> = g.iter().chain(&im).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(f64::INFINITY);

    let (ng, ni) = (g.len() as f64, im.len() as f64);
    // Two pointers: number of scores strictly below the threshold.
    let (mut gi, mut ii) = (0, 0);
    Ok(thresholds
        .into_iter()
        .map(|t| {
            while gi < g.len() && g[gi] < t {
                gi += 1;
            }
            while ii < im.len() && im[ii] < t {
                ii += 1;
            }
            RocPoint {
                threshold: t,
                far: ii as f64 / ni,
                frr: (g.len() - gi) as f64 / ng,
            }
        })
        .collect())
}

/// Equal error rate and the threshold achieving it. Linear interpolation
/// between the two sweep points bracketing `FAR = FRR`; when both rates meet
/// at a sweep point the threshold sits midway into the score gap below it.
pub fn eer_from_roc(roc: &[RocPoint]) -> (f64, f64) {
    let diff = |p: &RocPoint| p.far - p.frr;
    for i in 0..roc.len() {
        let d = diff(&roc[i]);
        if d == 0.0 {
            let thr = match i {
                0 => roc[0].threshold,
                _ => 0.5 * (roc[i - 1].threshold + roc[i].threshold),
            };
            return (roc[i].far, thr);
        }
        if d > 0.0 {
            // roc[0] always has FAR = 0 and FRR > 0, so i > 0 here.
            let (a, b) = (&roc[i - 1], &roc[i]);
            let (da, db) = (diff(a), d);
            let t = -da / (db - da);
            let eer = a.far + t * (b.far - a.far);
            let upper = if b.threshold.is_finite() {
                b.threshold
            } else {
                a.threshold + a.threshold.abs().max(1.0)
            };
            return (eer, a.threshold + t * (upper - a.threshold));
        }
    }
    let last = roc.last().expect("non-empty curve");
    (last.far, last.threshold)
}

pub fn eer(genuine: &[f64], impostor: &[f64]) -> Result<(f64, f64)> {
    Ok(eer_from_roc(&roc_curve(genuine, impostor)?))
}

/// Lowest FRR over sweep points with `FAR <= target`.
pub fn frr_at_far(roc: &[RocPoint], target: f64) -> f64 {
    roc.iter()
        .filter(|p| p.far <= target)
        .map(|p| p.frr)
        .fold(1.0, f64::min)
}

/// Largest sweep threshold whose FAR does not exceed `target`.
pub fn threshold_at_far(genuine: &[f64], impostor: &[f64], target: f64) -> Result<f64> {
    let roc = roc_curve(genuine, impostor)?;
    Ok(roc
        .iter()
        .filter(|p| p.far <= target)
        .map(|p| p.threshold)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn compute_metrics(genuine: &[f64], guessing: &[f64], spoof: &[f64]) -> Result<MetricsReport> {
    let roc = roc_curve(genuine, guessing)?;
    let (eer, threshold) = eer_from_roc(&roc);
    let (fr, fa) = error_counts(genuine, guessing, threshold);
    let (far_spoof, eer_spoof) = if spoof.is_empty() {
        (None, None)
    } else {
        let (_, ss) = error_counts(genuine, spoof, threshold);
        let (e, _) = eer_from_roc(&roc_curve(genuine, spoof)?);
        (Some(ss as f64 / spoof.len() as f64), Some(e))
    };
    Ok(MetricsReport {
        n_genuine: genuine.len(),
        n_guessing: guessing.len(),
        n_spoof: spoof.len(),
        threshold,
        frr: fr as f64 / genuine.len() as f64,
        far: fa as f64 / guessing.len() as f64,
        far_spoof,
        eer,
        eer_spoof,
        frr_at_far: FrrAtFar {
            far10k: frr_at_far(&roc, 1e-4),
            far100k: frr_at_far(&roc, 1e-5),
            zero_far: frr_at_far(&roc, 0.0),
        },
        roc,
    })
}
