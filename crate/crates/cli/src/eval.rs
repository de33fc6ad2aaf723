use std::path::PathBuf;
use std::time::Instant;

use airsign_core::eval::{
    auth_report, enroll_all, exhaustive_latency, prepare_corpus, run_ident_experiment, run_permanence, score_table,
    train_index, AuthReport, IdentReport, LatencyFit, Method, PermanenceReport, Policy,
};
use airsign_core::synth::{gen_corpus, load_corpus, Corpus, CorpusConfig};
use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use serde::Serialize;

use crate::config::FileConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    Auth,
    Ident,
    Permanence,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    SvmEnsemble,
    PlainDtw,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Static,
    Update,
    UpdateAndRetrain,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Corpus directory written by `airsign synth`. Without it a corpus is
    /// generated from the configuration.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "auth")]
    experiment: Experiment,
    #[arg(long, value_enum, default_value = "both")]
    method: MethodArg,
    /// Template policies of the permanence run; repeat for several.
    #[arg(long, value_enum)]
    policy: Vec<PolicyArg>,
    /// Seed of the generated corpus and of every training step.
    #[arg(long)]
    seed: Option<u64>,
    /// Where to write the JSON results.
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub config: FileConfig,
    pub corpus_source: String,
    pub auth: Vec<AuthReport>,
    pub ident: Option<IdentReport>,
    pub latency: Option<LatencyFit>,
    pub permanence: Option<PermanenceReport>,
}

fn obtain(path: Option<&PathBuf>, generated: &CorpusConfig) -> anyhow::Result<(Corpus, String)> {
    Ok(match path {
        Some(p) => (
            load_corpus(p).with_context(|| format!("loading corpus {}", p.display()))?,
            p.display().to_string(),
        ),
        None => (gen_corpus(generated)?, format!("generated (seed {})", generated.seed)),
    })
}

pub fn run(args: EvalArgs, mut cfg: FileConfig) -> anyhow::Result<EvalReport> {
    if let Some(seed) = args.seed {
        cfg.corpus.seed = seed;
        cfg.permanence_corpus.seed = seed;
        cfg.eval.seed = seed;
        cfg.ident.seed = seed;
    }
    if !args.policy.is_empty() {
        cfg.permanence.policies = args
            .policy
            .iter()
            .map(|p| match p {
                PolicyArg::Static => Policy::Static,
                PolicyArg::Update => Policy::Update,
                PolicyArg::UpdateAndRetrain => Policy::UpdateAndRetrain,
            })
            .collect();
    }
    let exp = args.experiment;
    let mut report = EvalReport {
        config: cfg.clone(),
        corpus_source: String::new(),
        auth: Vec::new(),
        ident: None,
        latency: None,
        permanence: None,
    };

    if matches!(exp, Experiment::Auth | Experiment::Ident | Experiment::All) {
        let (corpus, source) = obtain(args.corpus.as_ref(), &cfg.corpus)?;
        report.corpus_source = source;
        let prepared = prepare_corpus(&corpus, &cfg.eval.preprocess)?;
        let mut eval_cfg = cfg.eval.clone();
        // Verification during identification needs per-account thresholds.
        eval_cfg.calibrate = eval_cfg.calibrate && exp != Experiment::Auth;
        let t = Instant::now();
        let enrolled = enroll_all(&prepared, &eval_cfg)?;
        log::info!("enrolled {} accounts in {:.1?}", enrolled.len(), t.elapsed());

        let methods: &[Method] = match (exp, args.method) {
            (Experiment::Ident, _) => &[],
            (_, MethodArg::SvmEnsemble) => &[Method::SvmEnsemble],
            (_, MethodArg::PlainDtw) => &[Method::PlainDtw],
            (_, MethodArg::Both) => &[Method::SvmEnsemble, Method::PlainDtw],
        };
        let mut svm_table = None;
        for &m in methods {
            let t = Instant::now();
            let table = score_table(&prepared, &enrolled, m)?;
            report.auth.push(auth_report(&table, t.elapsed().as_secs_f64())?);
            if m == Method::SvmEnsemble {
                svm_table = Some(table);
            }
        }
        if exp != Experiment::Auth {
            let table = match svm_table {
                Some(t) => t,
                None => score_table(&prepared, &enrolled, Method::SvmEnsemble)?,
            };
            let t = Instant::now();
            let (model, train) = train_index(&prepared, &cfg.ident.augment, &cfg.ident.train, cfg.ident.seed)?;
            let train_seconds = t.elapsed().as_secs_f64();
            let ident = run_ident_experiment(&prepared, &enrolled, &table, &model, train, train_seconds, &cfg.ident)?;
            report.latency = Some(exhaustive_latency(
                &prepared,
                &enrolled,
                &cfg.latency.sizes,
                cfg.latency.queries,
                ident.threshold,
            )?);
            report.ident = Some(ident);
        }
    }

    if matches!(exp, Experiment::Permanence | Experiment::All) {
        let path = if exp == Experiment::Permanence {
            args.corpus.as_ref()
        } else {
            None
        };
        let (corpus, source) = obtain(path, &cfg.permanence_corpus)?;
        if corpus.config.sessions == 0 {
            bail!("the permanence experiment needs a corpus with login sessions");
        }
        if report.corpus_source.is_empty() {
            report.corpus_source = source;
        }
        let prepared = prepare_corpus(&corpus, &cfg.eval.preprocess)?;
        let eval_cfg = airsign_core::eval::EvalConfig {
            calibrate: false,
            ..cfg.eval.clone()
        };
        let enrolled = enroll_all(&prepared, &eval_cfg)?;
        report.permanence = Some(run_permanence(&prepared, &enrolled, None, &eval_cfg, &cfg.permanence)?);
    }

    let json = serde_json::to_string_pretty(&report)?;
    std::fs::write(&args.out, json).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(report)
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

pub fn summary(r: &EvalReport) -> String {
    let mut out = format!("corpus: {}\n", r.corpus_source);
    for a in &r.auth {
        let m = &a.metrics;
        out += &format!(
            "auth {:?}: {} accounts, EER {} (spoof {}), FAR10K FRR {}, ZeroFAR FRR {}, {:.1}s\n",
            a.method,
            a.accounts,
            pct(m.eer),
            m.eer_spoof.map_or("n/a".into(), pct),
            pct(m.frr_at_far.far10k),
            pct(m.frr_at_far.zero_far),
            a.seconds
        );
    }
    if let Some(i) = &r.ident {
        out += &format!(
            "ident: {} accounts, {} queries, threshold {:.4}, training {:.1}s\n",
            i.accounts, i.queries, i.threshold, i.train_seconds
        );
        for row in &i.rows {
            out += &format!(
                "  k={}: accuracy {} (unverified {}), spoof success {} (unverified {})\n",
                row.k,
                pct(row.accuracy),
                pct(row.accuracy_unverified),
                pct(row.spoof_success),
                pct(row.spoof_success_unverified)
            );
        }
        out += &format!(
            "  exhaustive: accuracy {}, spoof success {}\n",
            pct(i.exhaustive.accuracy),
            pct(i.exhaustive.spoof_success)
        );
    }
    if let Some(l) = &r.latency {
        let pts: Vec<String> = l
            .points
            .iter()
            .map(|p| format!("{}: {:.1}ms", p.accounts, 1e3 * p.seconds_per_query))
            .collect();
        out += &format!("exhaustive latency: {} (R^2 {:.4})\n", pts.join(", "), l.r_squared);
    }
    if let Some(p) = &r.permanence {
        out += &format!("permanence: threshold {:.4}\n", p.threshold);
        for s in &p.series {
            let acc: Vec<String> = s.sessions.iter().map(|x| format!("{:.2}", x.acceptance)).collect();
            out += &format!("  {:?}: {}\n", s.policy, acc.join(" "));
        }
        for c in &p.comparisons {
            out += &format!(
                "  {:?} vs {:?}: diff {:+.2} pp, z {:.2}, {:?}\n",
                c.better,
                c.worse,
                100.0 * c.difference,
                c.z,
                c.verdict
            );
        }
    }
    out
}
