use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::align::{build_template, dtw_distance, Template};
use crate::auth::{calibrate_threshold, distance_series, train_ensemble_from_distances, EnsembleConfig, SvmEnsemble};
use crate::error::{Error, Result};
use crate::features::DistanceSeries;
use crate::rng;
use crate::signal::{prepare, PreprocessConfig, Signal};
use crate::synth::Corpus;

use super::metrics::{compute_metrics, MetricsReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub preprocess: PreprocessConfig,
    pub ensemble: EnsembleConfig,
    /// Calibrate each ensemble's own threshold at enrollment. Needed for
    /// verification during identification; the authentication metrics sweep
    /// thresholds and do not use it.
    pub calibrate: bool,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            ensemble: EnsembleConfig::default(),
            calibrate: true,
            seed: 7,
        }
    }
}

/// Preprocessed signals of one corpus account.
#[derive(Debug, Clone)]
pub struct PreparedAccount {
    pub id: String,
    pub reg: Vec<Signal>,
    pub test: Vec<Signal>,
    pub spoof: Vec<Signal>,
    pub sessions: Vec<Vec<Signal>>,
}

pub fn prepare_corpus(corpus: &Corpus, cfg: &PreprocessConfig) -> Result<Vec<PreparedAccount>> {
    let all =
        |v: &[crate::signal::RawTrajectory]| -> Result<Vec<Signal>> { v.iter().map(|t| prepare(t, cfg)).collect() };
    corpus
        .accounts
        .iter()
        .map(|a| {
            Ok(PreparedAccount {
                id: a.id.clone(),
                reg: all(&a.reg)?,
                test: all(&a.test)?,
                spoof: all(&a.spoof)?,
                sessions: a.sessions.iter().map(|s| all(s)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EnrolledAccount {
    pub id: String,
    pub template: Template,
    pub reference: Signal,
    pub ensemble: SvmEnsemble,
    /// Registration distance series, kept for retraining.
    pub positives: Vec<DistanceSeries>,
    pub negatives: Vec<DistanceSeries>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    SvmEnsemble,
    PlainDtw,
}

/// Builds the template and trains the ensemble of account `idx`, with the
/// registration signals of every other account as negatives.
pub fn enroll_account(prepared: &[PreparedAccount], idx: usize, cfg: &EvalConfig) -> Result<EnrolledAccount> {
    let acc = &prepared[idx];
    let dtw = cfg.ensemble.dtw;
    let template = build_template(&acc.reg, &dtw)?;
    let reference = template.as_signal()?;
    let positives = acc
        .reg
        .iter()
        .map(|s| distance_series(s, &template, &dtw))
        .collect::<Result<Vec<_>>>()?;
    let negatives = prepared
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != idx)
        .flat_map(|(_, other)| other.reg.iter())
        .map(|s| distance_series(s, &template, &dtw))
        .collect::<Result<Vec<_>>>()?;
    let seed = rng::derive_str(cfg.seed, &acc.id);
    let mut ensemble = train_ensemble_from_distances(&positives, &negatives, &cfg.ensemble, seed)?.ensemble;
    if cfg.calibrate {
        ensemble.threshold = Some(calibrate_threshold(
            &ensemble,
            &positives,
            &negatives,
            &cfg.ensemble,
            seed,
        )?);
    }
    Ok(EnrolledAccount {
        id: acc.id.clone(),
        template,
        reference,
        ensemble,
        positives,
        negatives,
    })
}

pub fn enroll_all(prepared: &[PreparedAccount], cfg: &EvalConfig) -> Result<Vec<EnrolledAccount>> {
    (0..prepared.len()).map(|i| enroll_account(prepared, i, cfg)).collect()
}

impl EnrolledAccount {
    pub fn score(&self, s: &Signal, method: Method) -> Result<f64> {
        match method {
            Method::SvmEnsemble => self.ensemble.score(&self.template, s),
            Method::PlainDtw => Ok(dtw_distance(&self.reference, s, &self.ensemble.dtw)? / self.template.len() as f64),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuthScores {
    pub genuine: Vec<f64>,
    pub guessing: Vec<f64>,
    pub spoof: Vec<f64>,
}

/// Scores of every enrolled account against every account's test signals,
/// plus each account's spoof signals against that account.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreTable {
    pub method: Method,
    pub accounts: usize,
    /// Test signals per account.
    pub per_account: usize,
    /// `cross[(i * accounts + j) * per_account + r]` is account `i` scoring
    /// test signal `r` of account `j`.
    pub cross: Vec<f64>,
    /// `spoof[i]` holds account `i` scoring its own spoof signals.
    pub spoof: Vec<Vec<f64>>,
}

impl ScoreTable {
    pub fn get(&self, model: usize, owner: usize, rep: usize) -> f64 {
        self.cross[(model * self.accounts + owner) * self.per_account + rep]
    }

    pub fn auth_scores(&self) -> AuthScores {
        let mut out = AuthScores::default();
        for i in 0..self.accounts {
            for j in 0..self.accounts {
                for r in 0..self.per_account {
                    let v = self.get(i, j, r);
                    if i == j {
                        out.genuine.push(v);
                    } else {
                        out.guessing.push(v);
                    }
                }
            }
            out.spoof.extend_from_slice(&self.spoof[i]);
        }
        out
    }
}

pub fn score_table(prepared: &[PreparedAccount], enrolled: &[EnrolledAccount], method: Method) -> Result<ScoreTable> {
    let n = enrolled.len();
    let per_account = prepared.first().map_or(0, |a| a.test.len());
    if prepared.len() != n || prepared.iter().any(|a| a.test.len() != per_account) {
        return Err(Error::Validation(
            "every account needs the same number of test signals".into(),
        ));
    }
    let mut cross = Vec::with_capacity(n * n * per_account);
    let mut spoof = Vec::with_capacity(n);
    for (i, acc) in enrolled.iter().enumerate() {
        for other in prepared {
            for s in &other.test {
                cross.push(acc.score(s, method)?);
            }
        }
        spoof.push(
            prepared[i]
                .spoof
                .iter()
                .map(|s| acc.score(s, method))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(ScoreTable {
        method,
        accounts: n,
        per_account,
        cross,
        spoof,
    })
}

/// Genuine scores from each account's own test signals, guessing scores from
/// every other account's test signals, spoof scores from its spoof split.
pub fn collect_auth_scores(
    prepared: &[PreparedAccount],
    enrolled: &[EnrolledAccount],
    method: Method,
) -> Result<AuthScores> {
    Ok(score_table(prepared, enrolled, method)?.auth_scores())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthReport {
    pub method: Method,
    pub accounts: usize,
    pub requests_per_account: usize,
    pub metrics: MetricsReport,
    pub seconds: f64,
}

pub fn run_auth_experiment(
    prepared: &[PreparedAccount],
    enrolled: &[EnrolledAccount],
    method: Method,
) -> Result<AuthReport> {
    let start = Instant::now();
    let table = score_table(prepared, enrolled, method)?;
    auth_report(&table, start.elapsed().as_secs_f64())
}

/// Metrics of a finished score table.
pub fn auth_report(table: &ScoreTable, seconds: f64) -> Result<AuthReport> {
    if table.accounts < 2 {
        return Err(Error::InsufficientScores("guessing needs at least two accounts".into()));
    }
    let scores = table.auth_scores();
    let metrics = compute_metrics(&scores.genuine, &scores.guessing, &scores.spoof)?;
    Ok(AuthReport {
        method: table.method,
        accounts: table.accounts,
        requests_per_account: table.per_account,
        metrics,
        seconds,
    })
}
