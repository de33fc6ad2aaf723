use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::align::{dtw_align, DtwConfig, Template};
use crate::error::{Error, Result};
use crate::eval::metrics;
use crate::features::{local_distance, sample_feature_vectors_with, DistanceSeries, WindowSet};
use crate::rng;
use crate::signal::Signal;

use super::svm::{dot, train_svm, SmoConfig, SvmWarning};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Windows the distance series is cut into.
    pub h: usize,
    /// Windows each model looks at.
    pub t: usize,
    /// Number of models.
    pub m: usize,
    /// Augmented vectors drawn per registration signal and model.
    pub r_train: usize,
    /// Vectors averaged per model when scoring.
    pub r_score: usize,
    /// Upper bound on negative signals and on negative vectors per model.
    pub max_negatives: usize,
    pub smo: SmoConfig,
    pub dtw: DtwConfig,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            h: 64,
            t: 16,
            m: 32,
            r_train: 8,
            r_score: 8,
            max_negatives: 1000,
            smo: SmoConfig::default(),
            dtw: DtwConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub windows: WindowSet,
    pub w: Vec<f64>,
    pub b: f64,
}

impl SvmModel {
    #[inline]
    pub fn decision(&self, x: &[f64]) -> f64 {
        dot(&self.w, x) + self.b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmEnsemble {
    pub h: usize,
    pub t: usize,
    pub c: f64,
    pub r_score: usize,
    pub score_seed: u64,
    pub dtw: DtwConfig,
    pub threshold: Option<f64>,
    pub models: Vec<SvmModel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub accept: bool,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub negatives_used: usize,
    pub degenerate_models: usize,
    pub max_passes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedEnsemble {
    pub ensemble: SvmEnsemble,
    pub stats: TrainStats,
}

/// Accept iff the score lies strictly below the threshold.
#[inline]
pub fn decide(score: f64, threshold: f64) -> bool {
    score < threshold
}

/// Aligns `s` to the template and takes the element-wise distance.
pub fn distance_series(s: &Signal, tmpl: &Template, dtw: &DtwConfig) -> Result<DistanceSeries> {
    let reference = tmpl.as_signal()?;
    let aligned = dtw_align(s, &reference, dtw)?;
    local_distance(&aligned.samples, tmpl)
}

impl SvmEnsemble {
    pub fn m(&self) -> usize {
        self.models.len()
    }

    pub fn window_sets(&self) -> Vec<WindowSet> {
        self.models.iter().map(|m| m.windows.clone()).collect()
    }

    /// Mean decision value of each model over its scoring vectors.
    pub fn model_scores(&self, ds: &DistanceSeries) -> Result<Vec<f64>> {
        self.models
            .iter()
            .enumerate()
            .map(|(j, model)| {
                let mut r = rng::rng(rng::derive(self.score_seed, j as u64));
                let xs = sample_feature_vectors_with(ds, &model.windows, self.r_score, false, &mut r)?;
                Ok(xs.iter().map(|x| model.decision(x)).sum::<f64>() / xs.len() as f64)
            })
            .collect()
    }

    pub fn score_distances(&self, ds: &DistanceSeries) -> Result<f64> {
        let s = self.model_scores(ds)?;
        Ok(s.iter().sum::<f64>() / s.len() as f64)
    }

    /// Lower is more genuine.
    pub fn score(&self, tmpl: &Template, s: &Signal) -> Result<f64> {
        self.score_distances(&distance_series(s, tmpl, &self.dtw)?)
    }

    /// Scores `s` and compares against `threshold`, or the calibrated
    /// threshold when `None`.
    pub fn authenticate(&self, tmpl: &Template, s: &Signal, threshold: Option<f64>) -> Result<Decision> {
        let threshold = threshold
            .or(self.threshold)
            .ok_or_else(|| Error::Validation("ensemble has no decision threshold".into()))?;
        let score = self.score(tmpl, s)?;
        Ok(Decision {
            accept: decide(score, threshold),
            score,
        })
    }
}

/// Indices of at most `cap` negatives, chosen uniformly without replacement
/// when there are more.
pub fn select_negatives(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut idx = index::sample(&mut rng::rng(rng::derive_str(seed, "negatives")), n, cap).into_vec();
    idx.sort_unstable();
    idx
}

/// `m` random window sets, pairwise distinct whenever enough subsets exist.
pub fn draw_window_sets(h: usize, t: usize, m: usize, seed: u64) -> Result<Vec<WindowSet>> {
    let mut r = rng::rng(rng::derive_str(seed, "windows"));
    let mut sets: Vec<WindowSet> = Vec::with_capacity(m);
    while sets.len() < m {
        let mut ws = WindowSet::random(h, t, &mut r)?;
        for _ in 0..64 {
            if !sets.contains(&ws) {
                break;
            }
            ws = WindowSet::random(h, t, &mut r)?;
        }
        sets.push(ws);
    }
    Ok(sets)
}

/// Trains on raw registration and negative signals.
pub fn train_ensemble(
    reg: &[Signal],
    tmpl: &Template,
    negatives: &[Signal],
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<TrainedEnsemble> {
    let pos = reg
        .iter()
        .map(|s| distance_series(s, tmpl, &cfg.dtw))
        .collect::<Result<Vec<_>>>()?;
    let picked = select_negatives(negatives.len(), cfg.max_negatives, seed);
    let neg = picked
        .iter()
        .map(|&i| distance_series(&negatives[i], tmpl, &cfg.dtw))
        .collect::<Result<Vec<_>>>()?;
    let windows = draw_window_sets(cfg.h, cfg.t, cfg.m, seed)?;
    train_with_windows(&pos, &neg, windows, cfg, seed)
}

/// Like [`train_ensemble`] for distance series already computed against the
/// template.
pub fn train_ensemble_from_distances(
    pos: &[DistanceSeries],
    neg: &[DistanceSeries],
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<TrainedEnsemble> {
    let picked = select_negatives(neg.len(), cfg.max_negatives, seed);
    let neg: Vec<DistanceSeries> = picked.iter().map(|&i| neg[i].clone()).collect();
    let windows = draw_window_sets(cfg.h, cfg.t, cfg.m, seed)?;
    train_with_windows(pos, &neg, windows, cfg, seed)
}

/// Retrains every model on a new positive pool, keeping the window sets.
pub fn retrain(
    ens: &SvmEnsemble,
    pos: &[DistanceSeries],
    neg: &[DistanceSeries],
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<TrainedEnsemble> {
    let picked = select_negatives(neg.len(), cfg.max_negatives, seed);
    let neg: Vec<DistanceSeries> = picked.iter().map(|&i| neg[i].clone()).collect();
    let mut out = train_with_windows(pos, &neg, ens.window_sets(), cfg, seed)?;
    out.ensemble.score_seed = ens.score_seed;
    Ok(out)
}

pub fn train_with_windows(
    pos: &[DistanceSeries],
    neg: &[DistanceSeries],
    windows: Vec<WindowSet>,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<TrainedEnsemble> {
    if pos.is_empty() {
        return Err(Error::EmptyRegistration);
    }
    if neg.is_empty() {
        return Err(Error::InsufficientTrainingData("no negative signals".into()));
    }
    if windows.is_empty() {
        return Err(Error::Validation("ensemble needs at least one model".into()));
    }
    let per_negative = (cfg.max_negatives / neg.len()).max(1);
    let mut stats = TrainStats {
        negatives_used: neg.len(),
        ..Default::default()
    };
    let mut models = Vec::with_capacity(windows.len());
    for (j, ws) in windows.into_iter().enumerate() {
        let model_seed = rng::derive(seed, j as u64);
        let mut r = rng::rng(model_seed);
        let mut genuine = Vec::with_capacity(pos.len() * cfg.r_train);
        for ds in pos {
            genuine.extend(sample_feature_vectors_with(ds, &ws, cfg.r_train, true, &mut r)?);
        }
        let mut impostor = Vec::with_capacity(neg.len() * per_negative);
        for ds in neg {
            impostor.extend(sample_feature_vectors_with(ds, &ws, per_negative, false, &mut r)?);
        }
        let fit = train_svm(&genuine, &impostor, &cfg.smo, model_seed)?;
        if matches!(fit.warning, Some(SvmWarning::Degenerate { .. })) {
            stats.degenerate_models += 1;
        }
        stats.max_passes = stats.max_passes.max(fit.passes);
        models.push(SvmModel {
            windows: ws,
            w: fit.svm.w,
            b: fit.svm.b,
        });
    }
    Ok(TrainedEnsemble {
        ensemble: SvmEnsemble {
            h: cfg.h,
            t: cfg.t,
            c: cfg.smo.c,
            r_score: cfg.r_score,
            score_seed: rng::derive_str(seed, "score"),
            dtw: cfg.dtw,
            threshold: None,
            models,
        },
        stats,
    })
}

/// Equal-error threshold from held-out scores.
///
/// Positives and negatives are split into `K` folds (one registration signal
/// per fold); each fold is scored by an ensemble trained on the other folds
/// with the same window sets. With a single registration signal the
/// in-sample scores of `ens` are used.
pub fn calibrate_threshold(
    ens: &SvmEnsemble,
    pos: &[DistanceSeries],
    neg: &[DistanceSeries],
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<f64> {
    let picked = select_negatives(neg.len(), cfg.max_negatives, seed);
    let neg: Vec<&DistanceSeries> = picked.iter().map(|&i| &neg[i]).collect();
    let k = pos.len();
    let (mut genuine, mut impostor) = (Vec::new(), Vec::new());
    if k < 2 || neg.len() < 2 {
        for ds in pos {
            genuine.push(ens.score_distances(ds)?);
        }
        for ds in &neg {
            impostor.push(ens.score_distances(ds)?);
        }
    } else {
        let folds = k.min(neg.len());
        for fold in 0..k {
            let train_pos: Vec<DistanceSeries> = pos
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != fold)
                .map(|(_, d)| d.clone())
                .collect();
            let in_fold = |i: usize| i % folds == fold % folds;
            let train_neg: Vec<DistanceSeries> = neg
                .iter()
                .enumerate()
                .filter(|&(i, _)| !in_fold(i))
                .map(|(_, d)| (*d).clone())
                .collect();
            let sub = train_with_windows(
                &train_pos,
                &train_neg,
                ens.window_sets(),
                cfg,
                rng::derive(seed, 1000 + fold as u64),
            )?
            .ensemble;
            genuine.push(sub.score_distances(&pos[fold])?);
            if fold < folds {
                for (i, ds) in neg.iter().enumerate() {
                    if in_fold(i) {
                        impostor.push(sub.score_distances(ds)?);
                    }
                }
            }
        }
    }
    Ok(metrics::eer(&genuine, &impostor)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use rand::Rng;

    fn ds(rows: usize, dims: usize, level: f64, noise: f64, r: &mut impl Rng) -> DistanceSeries {
        let values = (0..rows * dims)
            .map(|_| (level + noise * r.random::<f64>()).max(0.0))
            .collect();
        DistanceSeries {
            values: Matrix::from_vec(rows, dims, values),
            sigma: Matrix::from_vec(rows, dims, vec![0.05; rows * dims]),
        }
    }

    fn toy(seed: u64) -> (Vec<DistanceSeries>, Vec<DistanceSeries>) {
        let mut r = rng::rng(seed);
        let pos = (0..5).map(|_| ds(40, 2, 0.0, 0.2, &mut r)).collect();
        let neg = (0..30).map(|_| ds(40, 2, 0.5, 1.0, &mut r)).collect();
        (pos, neg)
    }

    fn small() -> EnsembleConfig {
        EnsembleConfig {
            h: 8,
            t: 3,
            m: 4,
            ..Default::default()
        }
    }

    #[test]
    fn boundary_rejects() {
        assert!(decide(1.0 - 1e-12, 1.0));
        assert!(!decide(1.0, 1.0));
        assert!(!decide(1.0 + 1e-12, 1.0));
    }

    #[test]
    fn genuine_scores_below_impostors() {
        let (pos, neg) = toy(1);
        let t = train_ensemble_from_distances(&pos, &neg, &small(), 3).unwrap();
        let ens = t.ensemble;
        assert_eq!(ens.m(), 4);
        assert_eq!(t.stats.degenerate_models, 0);
        let mut r = rng::rng(77);
        let fresh_g = ds(40, 2, 0.0, 0.2, &mut r);
        let fresh_i = ds(40, 2, 0.5, 1.0, &mut r);
        assert!(ens.score_distances(&fresh_g).unwrap() < ens.score_distances(&fresh_i).unwrap());
    }

    #[test]
    fn zero_distance_scores_mean_bias() {
        let (pos, neg) = toy(2);
        let ens = train_ensemble_from_distances(&pos, &neg, &small(), 5).unwrap().ensemble;
        let zero = DistanceSeries {
            values: Matrix::zeros(40, 2),
            sigma: Matrix::zeros(40, 2),
        };
        let mean_b = ens.models.iter().map(|m| m.b).sum::<f64>() / ens.m() as f64;
        assert!((ens.score_distances(&zero).unwrap() - mean_b).abs() < 1e-12);
    }

    #[test]
    fn score_is_mean_of_model_scores() {
        let (pos, neg) = toy(3);
        let ens = train_ensemble_from_distances(&pos, &neg, &small(), 9).unwrap().ensemble;
        let probe = &neg[0];
        let per = ens.model_scores(probe).unwrap();
        let full = ens.score_distances(probe).unwrap();
        let mut fewer = ens.clone();
        fewer.models.pop();
        let m = per.len() as f64;
        let expected = (full * m - per[per.len() - 1]) / (m - 1.0);
        assert!((fewer.score_distances(probe).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn training_is_deterministic() {
        let (pos, neg) = toy(4);
        let a = train_ensemble_from_distances(&pos, &neg, &small(), 1).unwrap().ensemble;
        let b = train_ensemble_from_distances(&pos, &neg, &small(), 1).unwrap().ensemble;
        assert_eq!(a, b);
        assert_eq!(a.score_distances(&neg[1]).unwrap(), b.score_distances(&neg[1]).unwrap());
    }

    #[test]
    fn single_model_over_all_windows() {
        let (pos, neg) = toy(5);
        let cfg = EnsembleConfig {
            h: 8,
            t: 8,
            m: 1,
            ..Default::default()
        };
        let ens = train_ensemble_from_distances(&pos, &neg, &cfg, 0).unwrap().ensemble;
        assert_eq!(ens.models[0].windows.indices, (0..8).collect::<Vec<_>>());
        assert_eq!(ens.models[0].w.len(), 16);
    }

    #[test]
    fn window_sets_are_distinct() {
        let sets = draw_window_sets(64, 16, 32, 3).unwrap();
        for (i, a) in sets.iter().enumerate() {
            assert!(sets[i + 1..].iter().all(|b| a != b));
        }
    }

    #[test]
    fn negatives_are_capped() {
        let idx = select_negatives(5000, 1000, 1);
        assert_eq!(idx.len(), 1000);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(select_negatives(10, 1000, 1), (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn retrain_keeps_windows() {
        let (pos, neg) = toy(6);
        let ens = train_ensemble_from_distances(&pos, &neg, &small(), 2).unwrap().ensemble;
        let (more, _) = toy(7);
        let re = retrain(&ens, &[pos, more].concat(), &neg, &small(), 4)
            .unwrap()
            .ensemble;
        assert_eq!(re.window_sets(), ens.window_sets());
        assert_ne!(re.models[0].w, ens.models[0].w);
    }

    #[test]
    fn calibrated_threshold_separates_toy_classes() {
        let (pos, neg) = toy(8);
        let cfg = small();
        let ens = train_ensemble_from_distances(&pos, &neg, &cfg, 2).unwrap().ensemble;
        let thr = calibrate_threshold(&ens, &pos, &neg, &cfg, 2).unwrap();
        let mut r = rng::rng(99);
        let g: Vec<f64> = (0..20)
            .map(|_| ens.score_distances(&ds(40, 2, 0.0, 0.2, &mut r)).unwrap())
            .collect();
        let i: Vec<f64> = (0..20)
            .map(|_| ens.score_distances(&ds(40, 2, 0.5, 1.0, &mut r)).unwrap())
            .collect();
        let acc_g = g.iter().filter(|&&s| decide(s, thr)).count();
        let acc_i = i.iter().filter(|&&s| decide(s, thr)).count();
        assert!(acc_g >= 18 && acc_i <= 2, "{acc_g} {acc_i} thr {thr}");
    }
}
