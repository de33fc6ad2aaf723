use serde::{Deserialize, Serialize};

use crate::auth::EnsembleConfig;
use crate::ident::{AugmentConfig, TrainConfig};
use crate::signal::PreprocessConfig;

/// Every tunable of the login service. Fields left out of a config file
/// keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub preprocess: PreprocessConfig,
    pub ensemble: EnsembleConfig,
    pub augment: AugmentConfig,
    pub cnn: TrainConfig,
    /// Registration signals required per field.
    pub registration_signals: usize,
    /// Candidates verified per identification request.
    pub k: usize,
    /// Replaces the calibrated passcode threshold of every account.
    pub passcode_threshold: Option<f64>,
    /// Replaces the calibrated ID threshold of every account.
    pub id_threshold: Option<f64>,
    /// Move the passcode template toward each accepted login.
    pub update_on_accept: bool,
    pub lambda: f64,
    /// Consecutive rejects after which an account refuses logins. `None`
    /// never locks.
    pub lockout_after: Option<u32>,
    /// Synthetic writers used as negatives while the store has fewer than
    /// two compatible accounts.
    pub cold_start_writers: usize,
    /// Retrain the index in the background after each registration.
    pub auto_retrain: bool,
    pub seed: u64,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            preprocess: PreprocessConfig::default(),
            ensemble: EnsembleConfig::default(),
            augment: AugmentConfig::default(),
            cnn: TrainConfig::default(),
            registration_signals: 5,
            k: 3,
            passcode_threshold: None,
            id_threshold: None,
            update_on_accept: false,
            lambda: 0.1,
            lockout_after: None,
            cold_start_writers: 6,
            auto_retrain: true,
            seed: 99,
        }
    }
}
