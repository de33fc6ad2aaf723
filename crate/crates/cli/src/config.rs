use std::path::Path;

use airsign_core::eval::{EvalConfig, IdentConfig, PermanenceConfig};
use airsign_core::service::ServiceConfig;
use airsign_core::synth::CorpusConfig;
use anyhow::Context;
use serde::{Deserialize, Serialize};

/// Everything the operator can set from a TOML file. Each table is
/// optional and missing keys keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub service: ServiceConfig,
    pub corpus: CorpusConfig,
    /// Corpus of the multi-session experiment.
    pub permanence_corpus: CorpusConfig,
    pub eval: EvalConfig,
    pub ident: IdentConfig,
    pub permanence: PermanenceConfig,
    pub latency: LatencyConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    /// Store sizes timed by the exhaustive-search latency run.
    pub sizes: Vec<usize>,
    pub queries: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        Self {
            sizes: vec![50, 100, 200],
            queries: 10,
        }
    }
}

pub fn permanence_corpus_default() -> CorpusConfig {
    CorpusConfig {
        n_users: 20,
        specs_per_user: 1,
        spoofers: 0,
        sessions: 10,
        drift_step: 0.06,
        ..Default::default()
    }
}

impl Default for FileConfig {
    fn default() -> Self {
        Self {
            service: ServiceConfig::default(),
            corpus: CorpusConfig::default(),
            permanence_corpus: permanence_corpus_default(),
            eval: EvalConfig::default(),
            ident: IdentConfig::default(),
            permanence: PermanenceConfig::default(),
            latency: LatencyConfig::default(),
        }
    }
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_file_keeps_defaults() {
        let c: FileConfig = toml::from_str(
            "[service]\nk = 5\nlockout_after = 3\n[service.ensemble]\nh = 32\n[permanence]\nlambda = 0.2\n",
        )
        .unwrap();
        assert_eq!(c.service.k, 5);
        assert_eq!(c.service.lockout_after, Some(3));
        assert_eq!(c.service.ensemble.h, 32);
        assert_eq!(c.service.ensemble.t, 16);
        assert_eq!(c.permanence.lambda, 0.2);
        assert_eq!(c.permanence_corpus.sessions, 10);
    }

    #[test]
    fn unknown_tables_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[servce]\nk = 5\n").is_err());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = FileConfig::default();
        let back: FileConfig = toml::from_str(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
