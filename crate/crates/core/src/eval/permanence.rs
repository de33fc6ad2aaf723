use serde::{Deserialize, Serialize};

use crate::align::{dtw_align, update_template};
use crate::auth::{distance_series, retrain};
use crate::error::{Error, Result};
use crate::ident::CnnModel;
use crate::rng;
use crate::signal::Signal;

use super::experiments::{score_table, EnrolledAccount, EvalConfig, Method, PreparedAccount};
use super::metrics::threshold_at_far;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Static,
    Update,
    UpdateAndRetrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PermanenceConfig {
    pub policies: Vec<Policy>,
    /// Template update factor.
    pub lambda: f64,
    /// FAR at which the shared decision threshold is set.
    pub far_target: f64,
    /// Accuracy gap, as a rate, that counts as an ordering.
    pub min_gap: f64,
    /// |z| below which two acceptance rates are declared tied.
    pub tie_z: f64,
}

impl Default for PermanenceConfig {
    fn default() -> Self {
        Self {
            policies: vec![Policy::Static, Policy::Update, Policy::UpdateAndRetrain],
            lambda: 0.1,
            far_target: 1e-4,
            min_gap: 0.01,
            tie_z: 1.96,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub session: usize,
    pub accepted: usize,
    pub total: usize,
    pub acceptance: f64,
    /// Share of session signals whose top CNN candidate is the owner and
    /// passes verification. Absent without a model.
    pub identification: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySeries {
    pub policy: Policy,
    pub sessions: Vec<SessionResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Ordered,
    Tie,
    Violated,
}

/// Final-session comparison of `better` against `worse`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub better: Policy,
    pub worse: Policy,
    pub difference: f64,
    pub z: f64,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermanenceReport {
    pub threshold: f64,
    pub series: Vec<PolicySeries>,
    pub comparisons: Vec<Comparison>,
}

/// Two-proportion z statistic of `a1/n1 - a2/n2` with a pooled variance.
pub fn two_proportion_z(a1: usize, n1: usize, a2: usize, n2: usize) -> f64 {
    let (p1, p2) = (a1 as f64 / n1 as f64, a2 as f64 / n2 as f64);
    let p = (a1 + a2) as f64 / (n1 + n2) as f64;
    let se = (p * (1.0 - p) * (1.0 / n1 as f64 + 1.0 / n2 as f64)).sqrt();
    if se == 0.0 {
        0.0
    } else {
        (p1 - p2) / se
    }
}

pub fn compare(
    better: (&Policy, &SessionResult),
    worse: (&Policy, &SessionResult),
    cfg: &PermanenceConfig,
) -> Comparison {
    let (b, w) = (better.1, worse.1);
    let difference = b.acceptance - w.acceptance;
    let z = two_proportion_z(b.accepted, b.total, w.accepted, w.total);
    let verdict = if difference >= cfg.min_gap || (difference > 0.0 && z >= cfg.tie_z) {
        Verdict::Ordered
    } else if z.abs() < cfg.tie_z {
        Verdict::Tie
    } else {
        Verdict::Violated
    };
    Comparison {
        better: *better.0,
        worse: *worse.0,
        difference,
        z,
        verdict,
    }
}

struct State {
    account: EnrolledAccount,
    /// Signals behind the positive pool: registration plus accepted
    /// session signals.
    pool: Vec<Signal>,
}

/// Replays the login sessions of every account under each policy. One
/// threshold, set at `far_target` on the registration-time test and
/// guessing scores, is shared by all policies and sessions.
pub fn run_permanence(
    prepared: &[PreparedAccount],
    enrolled: &[EnrolledAccount],
    model: Option<&CnnModel>,
    eval: &EvalConfig,
    cfg: &PermanenceConfig,
) -> Result<PermanenceReport> {
    let sessions = prepared.first().map_or(0, |a| a.sessions.len());
    if sessions == 0 || prepared.iter().any(|a| a.sessions.len() != sessions) {
        return Err(Error::Validation(
            "every account needs the same, nonzero number of sessions".into(),
        ));
    }
    let initial = score_table(prepared, enrolled, Method::SvmEnsemble)?.auth_scores();
    let threshold = threshold_at_far(&initial.genuine, &initial.guessing, cfg.far_target)?;
    let dtw = eval.ensemble.dtw;

    let mut series = Vec::with_capacity(cfg.policies.len());
    for &policy in &cfg.policies {
        let mut states: Vec<State> = enrolled
            .iter()
            .zip(prepared)
            .map(|(e, p)| State {
                account: e.clone(),
                pool: p.reg.clone(),
            })
            .collect();
        let mut results = Vec::with_capacity(sessions);
        for session in 0..sessions {
            let (mut accepted_n, mut total, mut identified) = (0, 0, 0);
            for (i, state) in states.iter_mut().enumerate() {
                let mut accepted = Vec::new();
                for s in &prepared[i].sessions[session] {
                    total += 1;
                    let score = state.account.score(s, Method::SvmEnsemble)?;
                    let ok = score < threshold;
                    if ok {
                        accepted_n += 1;
                        accepted.push(s.clone());
                    }
                    if let Some(m) = model {
                        if ok && m.predict_topk(s, 1)?[0].0 == i as u64 {
                            identified += 1;
                        }
                    }
                }
                if policy == Policy::Static || accepted.is_empty() {
                    continue;
                }
                let acc = &mut state.account;
                for s in &accepted {
                    let aligned = dtw_align(s, &acc.reference, &dtw)?;
                    acc.template = update_template(&acc.template, &aligned.samples, cfg.lambda)?;
                    acc.reference = acc.template.as_signal()?;
                }
                if policy == Policy::UpdateAndRetrain {
                    state.pool.extend(accepted);
                    acc.positives = state
                        .pool
                        .iter()
                        .map(|s| distance_series(s, &acc.template, &dtw))
                        .collect::<Result<_>>()?;
                    acc.negatives = prepared
                        .iter()
                        .enumerate()
                        .filter(|&(j, _)| j != i)
                        .flat_map(|(_, p)| p.reg.iter())
                        .map(|s| distance_series(s, &acc.template, &dtw))
                        .collect::<Result<_>>()?;
                    let seed = rng::derive(rng::derive_str(eval.seed, &acc.id), session as u64 + 1);
                    let threshold = acc.ensemble.threshold;
                    acc.ensemble =
                        retrain(&acc.ensemble, &acc.positives, &acc.negatives, &eval.ensemble, seed)?.ensemble;
                    acc.ensemble.threshold = threshold;
                }
            }
            results.push(SessionResult {
                session: session + 1,
                accepted: accepted_n,
                total,
                acceptance: accepted_n as f64 / total as f64,
                identification: model.map(|_| identified as f64 / total as f64),
            });
        }
        series.push(PolicySeries {
            policy,
            sessions: results,
        });
    }

    let last = |p: Policy| series.iter().find(|s| s.policy == p).and_then(|s| s.sessions.last());
    let mut comparisons = Vec::new();
    for (better, worse) in [
        (Policy::UpdateAndRetrain, Policy::Update),
        (Policy::Update, Policy::Static),
    ] {
        if let (Some(b), Some(w)) = (last(better), last(worse)) {
            comparisons.push(compare((&better, b), (&worse, w), cfg));
        }
    }
    Ok(PermanenceReport {
        threshold,
        series,
        comparisons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(accepted: usize, total: usize) -> SessionResult {
        SessionResult {
            session: 1,
            accepted,
            total,
            acceptance: accepted as f64 / total as f64,
            identification: None,
        }
    }

    #[test]
    fn z_matches_hand_computation() {
        // p1 = 0.9, p2 = 0.8, pooled 0.85, se = sqrt(0.85 * 0.15 * 0.02).
        let z = two_proportion_z(90, 100, 80, 100);
        assert!((z - 0.1 / (0.85f64 * 0.15 * 0.02).sqrt()).abs() < 1e-12);
        assert_eq!(two_proportion_z(10, 10, 10, 10), 0.0);
    }

    #[test]
    fn verdicts() {
        let cfg = PermanenceConfig::default();
        let u = Policy::Update;
        let s = Policy::Static;
        assert_eq!(
            compare((&u, &result(95, 100)), (&s, &result(90, 100)), &cfg).verdict,
            Verdict::Ordered
        );
        assert_eq!(
            compare((&u, &result(90, 100)), (&s, &result(91, 100)), &cfg).verdict,
            Verdict::Tie
        );
        assert_eq!(
            compare((&u, &result(50, 100)), (&s, &result(90, 100)), &cfg).verdict,
            Verdict::Violated
        );
    }
}
