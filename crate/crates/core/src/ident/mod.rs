//! Account identification: a CNN proposes candidate accounts for a signal
//! and each candidate is verified against its own template and ensemble.

pub mod augment;
pub mod cnn;
mod model;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::signal::Signal;

pub use augment::{augment_registration, AugmentConfig, Augmented, Perturbation};
pub use cnn::{CnnArch, ConvSpec, Loss, Network, Trace};
pub use model::{stretch_to_fixed, train_cnn, train_with_arch, CnnModel, TrainConfig, TrainReport, MODEL_VERSION};

/// Verification outcome for one candidate account.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub score: f64,
    pub threshold: f64,
}

impl Verification {
    pub fn accepted(&self) -> bool {
        self.score < self.threshold
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub account: u64,
    pub probability: f64,
    /// `None` when the account could not be verified (for example, removed
    /// from the store since the model was trained).
    pub verification: Option<Verification>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    /// Best verified account, or `None` for "unidentified".
    pub account: Option<u64>,
    pub score: Option<f64>,
    pub candidates: Vec<Candidate>,
}

/// Runs `verify` on the top `k` candidates and returns the accepted one with
/// the lowest score.
pub fn identify<F>(model: &CnnModel, s: &Signal, k: usize, mut verify: F) -> Result<Identification>
where
    F: FnMut(u64) -> Result<Option<Verification>>,
{
    let mut out = Identification {
        account: None,
        score: None,
        candidates: Vec::new(),
    };
    for (account, probability) in model.predict_topk(s, k)? {
        let verification = verify(account)?;
        if let Some(v) = verification.filter(Verification::accepted) {
            if out.score.is_none_or(|best| v.score < best) {
                out.account = Some(account);
                out.score = Some(v.score);
            }
        }
        out.candidates.push(Candidate {
            account,
            probability,
            verification,
        });
    }
    Ok(out)
}

/// Identification without a model: verify every account and keep the
/// accepted one with the lowest score.
pub fn identify_exhaustive<I, F>(accounts: I, mut verify: F) -> Result<Identification>
where
    I: IntoIterator<Item = u64>,
    F: FnMut(u64) -> Result<Option<Verification>>,
{
    let mut out = Identification {
        account: None,
        score: None,
        candidates: Vec::new(),
    };
    for account in accounts {
        if let Some(v) = verify(account)?.filter(Verification::accepted) {
            if out.score.is_none_or(|best| v.score < best) {
                out.account = Some(account);
                out.score = Some(v.score);
            }
        }
    }
    Ok(out)
}
