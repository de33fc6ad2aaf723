use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ident::{
    augment_registration, identify_exhaustive, train_cnn, AugmentConfig, CnnModel, TrainConfig, TrainReport,
    Verification,
};
use crate::rng;
use crate::signal::Signal;

use super::experiments::{EnrolledAccount, Method, PreparedAccount, ScoreTable};
use super::metrics::eer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentConfig {
    pub ks: Vec<usize>,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    /// Verification threshold shared by all accounts. `None` uses the
    /// equal-error point of genuine against spoof scores.
    pub threshold: Option<f64>,
    pub seed: u64,
}

impl Default for IdentConfig {
    fn default() -> Self {
        Self {
            ks: (1..=7).collect(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            threshold: None,
            seed: 11,
        }
    }
}

/// Rates at one candidate count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentRow {
    pub k: usize,
    /// The owner is the verified account returned.
    pub accuracy: f64,
    /// The owner is among the `k` candidates.
    pub accuracy_unverified: f64,
    /// A spoof of account `i` is identified as `i`.
    pub spoof_success: f64,
    pub spoof_success_unverified: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExhaustiveResult {
    pub accuracy: f64,
    pub spoof_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentReport {
    pub accounts: usize,
    pub queries: usize,
    pub spoof_queries: usize,
    pub threshold: f64,
    pub train: TrainReport,
    pub train_seconds: f64,
    pub rows: Vec<IdentRow>,
    pub exhaustive: ExhaustiveResult,
    pub seconds: f64,
}

/// Augments every account's registration signals and trains the index, with
/// account `i` as class `i`.
pub fn train_index(
    prepared: &[PreparedAccount],
    augment: &AugmentConfig,
    train: &TrainConfig,
    seed: u64,
) -> Result<(CnnModel, TrainReport)> {
    let mut labeled = Vec::with_capacity(prepared.len() * augment.target);
    for (i, acc) in prepared.iter().enumerate() {
        let aug = augment_registration(&acc.reg, augment, rng::derive(seed, i as u64))?;
        labeled.extend(aug.signals.into_iter().map(|s| (s, i as u64)));
    }
    train_cnn(&labeled, train)
}

/// The accepted candidate with the lowest score; earlier candidates win ties.
fn pick(
    candidates: impl IntoIterator<Item = usize>,
    mut score: impl FnMut(usize) -> Result<f64>,
    threshold: f64,
) -> Result<Option<usize>> {
    let mut best: Option<(usize, f64)> = None;
    for c in candidates {
        let s = score(c)?;
        if s < threshold && best.is_none_or(|(_, b)| s < b) {
            best = Some((c, s));
        }
    }
    Ok(best.map(|b| b.0))
}

fn ranking(model: &CnnModel, s: &Signal, k: usize) -> Result<Vec<usize>> {
    Ok(model.predict_topk(s, k)?.into_iter().map(|(l, _)| l as usize).collect())
}

/// Identification rates for every `k` in `cfg.ks`, with and without
/// verification, plus the exhaustive-search baseline. Verification scores
/// come from `table` where it has them and are computed otherwise.
pub fn run_ident_experiment(
    prepared: &[PreparedAccount],
    enrolled: &[EnrolledAccount],
    table: &ScoreTable,
    model: &CnnModel,
    train: TrainReport,
    train_seconds: f64,
    cfg: &IdentConfig,
) -> Result<IdentReport> {
    let start = Instant::now();
    let n = enrolled.len();
    if table.method != Method::SvmEnsemble || table.accounts != n || prepared.len() != n {
        return Err(Error::Validation(
            "score table does not match the enrolled accounts".into(),
        ));
    }
    if cfg.ks.is_empty() || cfg.ks.contains(&0) {
        return Err(Error::Validation("candidate counts must be positive".into()));
    }
    let threshold = match cfg.threshold {
        Some(t) => t,
        None => {
            let scores = table.auth_scores();
            eer(&scores.genuine, &scores.spoof)?.1
        }
    };
    let kmax = cfg.ks.iter().copied().max().unwrap_or(1).min(n);
    let mut hits = vec![(0usize, 0usize, 0usize, 0usize); cfg.ks.len()];
    let mut exhaustive_hits = 0;
    let mut exhaustive_spoofs = 0;
    let (mut queries, mut spoof_queries) = (0, 0);

    for (j, acc) in prepared.iter().enumerate() {
        for (r, s) in acc.test.iter().enumerate() {
            queries += 1;
            let rank = ranking(model, s, kmax)?;
            for (h, &k) in hits.iter_mut().zip(&cfg.ks) {
                let top = &rank[..k.min(rank.len())];
                h.1 += top.contains(&j) as usize;
                let found = pick(top.iter().copied(), |c| Ok(table.get(c, j, r)), threshold)?;
                h.0 += (found == Some(j)) as usize;
            }
            exhaustive_hits += (pick(0..n, |c| Ok(table.get(c, j, r)), threshold)? == Some(j)) as usize;
        }

        for (r, s) in acc.spoof.iter().enumerate() {
            spoof_queries += 1;
            let own = table.spoof[j][r];
            let mut memo: HashMap<usize, f64> = HashMap::new();
            let mut score = |c: usize| -> Result<f64> {
                if c == j {
                    return Ok(own);
                }
                if let Some(&v) = memo.get(&c) {
                    return Ok(v);
                }
                let v = enrolled[c].score(s, Method::SvmEnsemble)?;
                memo.insert(c, v);
                Ok(v)
            };
            let rank = ranking(model, s, kmax)?;
            for (h, &k) in hits.iter_mut().zip(&cfg.ks) {
                let top = &rank[..k.min(rank.len())];
                if top.contains(&j) {
                    h.3 += 1;
                    if own < threshold && pick(top.iter().copied(), &mut score, threshold)? == Some(j) {
                        h.2 += 1;
                    }
                }
            }
            if own < threshold && pick(0..n, &mut score, threshold)? == Some(j) {
                exhaustive_spoofs += 1;
            }
        }
    }

    let rate = |x: usize, of: usize| if of == 0 { 0.0 } else { x as f64 / of as f64 };
    let rows = cfg
        .ks
        .iter()
        .zip(&hits)
        .map(|(&k, h)| IdentRow {
            k,
            accuracy: rate(h.0, queries),
            accuracy_unverified: rate(h.1, queries),
            spoof_success: rate(h.2, spoof_queries),
            spoof_success_unverified: rate(h.3, spoof_queries),
        })
        .collect();
    Ok(IdentReport {
        accounts: n,
        queries,
        spoof_queries,
        threshold,
        train,
        train_seconds,
        rows,
        exhaustive: ExhaustiveResult {
            accuracy: rate(exhaustive_hits, queries),
            spoof_success: rate(exhaustive_spoofs, spoof_queries),
        },
        seconds: start.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyPoint {
    pub accounts: usize,
    pub seconds_per_query: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyFit {
    pub points: Vec<LatencyPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Wall time of exhaustive identification against stores of each size in
/// `sizes`. Stores larger than the enrolled set reuse accounts cyclically;
/// only the cost per account matters here.
pub fn exhaustive_latency(
    prepared: &[PreparedAccount],
    enrolled: &[EnrolledAccount],
    sizes: &[usize],
    queries: usize,
    threshold: f64,
) -> Result<LatencyFit> {
    if enrolled.is_empty() || queries == 0 {
        return Err(Error::Validation("latency needs accounts and queries".into()));
    }
    let n = enrolled.len();
    let mut points = Vec::with_capacity(sizes.len());
    for &size in sizes {
        let start = Instant::now();
        for q in 0..queries {
            let s = &prepared[q % prepared.len()].test[0];
            identify_exhaustive(0..size as u64, |a| {
                let score = enrolled[a as usize % n].score(s, Method::SvmEnsemble)?;
                Ok(Some(Verification { score, threshold }))
            })?;
        }
        points.push(LatencyPoint {
            accounts: size,
            seconds_per_query: start.elapsed().as_secs_f64() / queries as f64,
        });
    }
    let (slope, intercept, r_squared) = linear_fit(
        &points.iter().map(|p| p.accounts as f64).collect::<Vec<_>>(),
        &points.iter().map(|p| p.seconds_per_query).collect::<Vec<_>>(),
    );
    Ok(LatencyFit {
        points,
        slope,
        intercept,
        r_squared,
    })
}

/// Least-squares line through `(x, y)` and its coefficient of determination.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    if sxx == 0.0 {
        return (0.0, my, 0.0);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}
