//! Synthetic in-air-handwriting corpus.
//!
//! A passcode is a string of glyphs from a shared alphabet; a glyph is a
//! handful of strokes; a stroke is a sequence of via points joined by
//! minimum-jerk segments. Writers differ in fixed habits (via offsets,
//! timing, slant, size, speed) and in how consistently they repeat
//! themselves. Spoofers know the passcode but write it in their own style.

mod render;

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use render::{
    alphabet, gen_signal, layout, random_passcode, word_pool, Glyph, PasscodeSpec, RenderConfig, Stroke, UserStyle,
};

use crate::error::{Error, Result};
use crate::rng;
use crate::signal::RawTrajectory;
use crate::signal::{read_trajectory, write_trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub n_users: usize,
    pub specs_per_user: usize,
    pub reg: usize,
    pub test: usize,
    pub spoofers: usize,
    pub spoof_reps: usize,
    pub sessions: usize,
    pub session_reps: usize,
    pub drift_step: f64,
    pub min_strokes: usize,
    pub max_strokes: usize,
    pub alphabet_size: usize,
    /// Number of common glyph words shared across passcodes.
    pub word_pool: usize,
    /// Chance that the next passcode chunk is a common word.
    pub common_words: f64,
    /// Spoofer habit and repetition noise relative to a genuine writer.
    pub spoof_jitter: f64,
    pub render: RenderConfig,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            n_users: 50,
            specs_per_user: 2,
            reg: 5,
            test: 5,
            spoofers: 7,
            spoof_reps: 5,
            sessions: 0,
            session_reps: 5,
            drift_step: 0.0,
            min_strokes: 8,
            max_strokes: 24,
            alphabet_size: 32,
            word_pool: 8,
            common_words: 0.9,
            spoof_jitter: 1.5,
            render: RenderConfig::default(),
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccountData {
    pub id: String,
    pub user: usize,
    pub spec: PasscodeSpec,
    pub reg: Vec<RawTrajectory>,
    pub test: Vec<RawTrajectory>,
    pub spoof: Vec<RawTrajectory>,
    /// Login sessions after registration, oldest first.
    pub sessions: Vec<Vec<RawTrajectory>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub config: CorpusConfig,
    pub accounts: Vec<AccountData>,
}

pub fn account_id(user: usize, spec: usize) -> String {
    format!("u{user:03}-p{spec}")
}

pub fn gen_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    if cfg.n_users < 2 {
        return Err(Error::Validation("a corpus needs at least 2 users".into()));
    }
    if cfg.min_strokes < 2 || cfg.max_strokes < cfg.min_strokes {
        return Err(Error::Validation("bad stroke range".into()));
    }
    let abc = alphabet(cfg.alphabet_size, cfg.seed);
    let pool = word_pool(&abc, cfg.word_pool, cfg.seed);
    let mut accounts = Vec::with_capacity(cfg.n_users * cfg.specs_per_user);
    for user in 0..cfg.n_users {
        let user_seed = rng::derive(cfg.seed, user as u64);
        let style = UserStyle::random(rng::derive_str(user_seed, "style"), &mut rng::rng(user_seed));
        for p in 0..cfg.specs_per_user {
            let id = account_id(user, p);
            let acc_seed = rng::derive_str(cfg.seed, &id);
            let mut r = rng::rng(rng::derive_str(acc_seed, "spec"));
            let n_strokes = r.random_range(cfg.min_strokes..=cfg.max_strokes);
            let spec = random_passcode(n_strokes, &abc, &pool, cfg.common_words, &mut r);

            let render = |style: &UserStyle, tag: &str, n: usize| -> Result<Vec<RawTrajectory>> {
                (0..n)
                    .map(|i| {
                        let seed = rng::derive(rng::derive_str(acc_seed, tag), i as u64);
                        gen_signal(&spec, style, &cfg.render, seed)
                    })
                    .collect()
            };
            let reg = render(&style, "reg", cfg.reg)?;
            let test = render(&style, "test", cfg.test)?;
            let mut spoof = Vec::with_capacity(cfg.spoofers * cfg.spoof_reps);
            for a in 0..cfg.spoofers {
                let s_seed = rng::derive(rng::derive_str(acc_seed, "spoofer"), a as u64);
                let mut attacker = UserStyle::random(s_seed, &mut rng::rng(s_seed));
                attacker.via_jitter *= cfg.spoof_jitter;
                attacker.rep_jitter *= cfg.spoof_jitter;
                spoof.extend(render(&attacker, &format!("spoof{a}"), cfg.spoof_reps)?);
            }
            let sessions = (1..=cfg.sessions)
                .map(|s| {
                    let drifted = style.at_session(s as u32, cfg.drift_step);
                    render(&drifted, &format!("session{s}"), cfg.session_reps)
                })
                .collect::<Result<Vec<_>>>()?;
            accounts.push(AccountData {
                id,
                user,
                spec,
                reg,
                test,
                spoof,
                sessions,
            });
        }
    }
    Ok(Corpus {
        config: cfg.clone(),
        accounts,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    config: CorpusConfig,
    accounts: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    user: usize,
    glyphs: Vec<usize>,
    strokes: usize,
    reg: usize,
    test: usize,
    spoof: usize,
    sessions: Vec<usize>,
}

fn write_split(dir: &Path, trajs: &[RawTrajectory]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, t) in trajs.iter().enumerate() {
        write_trajectory(&dir.join(format!("{i:03}.csv")), t)?;
    }
    Ok(())
}

fn read_split(dir: &Path, n: usize) -> Result<Vec<RawTrajectory>> {
    (0..n)
        .map(|i| read_trajectory(&dir.join(format!("{i:03}.csv"))))
        .collect()
}

/// Writes `account/<id>/{reg,test,spoof,session-<n>}/NNN.csv` plus
/// `manifest.json` under `root`.
pub fn save_corpus(corpus: &Corpus, root: &Path) -> Result<()> {
    let mut entries = Vec::with_capacity(corpus.accounts.len());
    for a in &corpus.accounts {
        let dir = root.join("account").join(&a.id);
        write_split(&dir.join("reg"), &a.reg)?;
        write_split(&dir.join("test"), &a.test)?;
        write_split(&dir.join("spoof"), &a.spoof)?;
        for (s, trajs) in a.sessions.iter().enumerate() {
            write_split(&dir.join(format!("session-{}", s + 1)), trajs)?;
        }
        entries.push(ManifestEntry {
            id: a.id.clone(),
            user: a.user,
            glyphs: a.spec.glyphs.clone(),
            strokes: a.spec.strokes.len(),
            reg: a.reg.len(),
            test: a.test.len(),
            spoof: a.spoof.len(),
            sessions: a.sessions.iter().map(Vec::len).collect(),
        });
    }
    let manifest = Manifest {
        config: corpus.config.clone(),
        accounts: entries,
    };
    fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_corpus(root: &Path) -> Result<Corpus> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(root.join("manifest.json"))?)?;
    let abc = alphabet(manifest.config.alphabet_size, manifest.config.seed);
    let accounts = manifest
        .accounts
        .into_iter()
        .map(|e| {
            let dir = root.join("account").join(&e.id);
            Ok(AccountData {
                spec: layout(&e.glyphs, &abc),
                reg: read_split(&dir.join("reg"), e.reg)?,
                test: read_split(&dir.join("test"), e.test)?,
                spoof: read_split(&dir.join("spoof"), e.spoof)?,
                sessions: e
                    .sessions
                    .iter()
                    .enumerate()
                    .map(|(s, &n)| read_split(&dir.join(format!("session-{}", s + 1)), n))
                    .collect::<Result<_>>()?,
                id: e.id,
                user: e.user,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        config: manifest.config,
        accounts,
    })
}
