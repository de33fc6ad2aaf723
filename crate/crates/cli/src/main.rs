mod config;
mod eval;
mod http;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use airsign_core::service::{
    spawn_server, Client, RequestBody, Response, ResponseBody, Service, Status, WireTrajectory,
};
use airsign_core::signal::read_trajectory;
use airsign_core::synth::{gen_corpus, save_corpus};
use airsign_core::RawTrajectory;
use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "airsign",
    version,
    about = "In-air-handwriting login: corpus, service and evaluation"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Start from the multi-session corpus settings.
        #[arg(long)]
        permanence: bool,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        specs: Option<usize>,
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        drift: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register an account from 5 ID and 5 passcode trajectory files.
    Enroll {
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        /// Trajectory CSV files, or directories of them.
        #[arg(long, num_args = 1.., required = true)]
        id: Vec<PathBuf>,
        #[arg(long, num_args = 1.., required = true)]
        passcode: Vec<PathBuf>,
    },
    /// Log in to an account with one passcode trajectory.
    Login {
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        #[arg(long)]
        account: String,
        #[arg(long)]
        signal: PathBuf,
    },
    /// Find the account an ID trajectory belongs to.
    Identify {
        #[arg(long, default_value = "127.0.0.1:7878")]
        server: String,
        #[arg(long)]
        signal: PathBuf,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Run the login service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Also serve the JSON protocol over HTTP at this address.
        #[arg(long)]
        http: Option<SocketAddr>,
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        passcode_threshold: Option<f64>,
        #[arg(long)]
        id_threshold: Option<f64>,
    },
    /// Run the evaluation experiments and write a JSON report.
    Eval(eval::EvalArgs),
    /// Retrain the identification index of a store now.
    TrainIndex {
        #[arg(long)]
        store: PathBuf,
    },
}

fn trajectories(paths: &[PathBuf]) -> anyhow::Result<Vec<RawTrajectory>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut inner: Vec<PathBuf> = std::fs::read_dir(p)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            inner.sort();
            files.extend(inner);
        } else {
            files.push(p.clone());
        }
    }
    files
        .iter()
        .map(|f| read_trajectory(f).with_context(|| format!("reading {}", f.display())))
        .collect()
}

fn one(path: &Path) -> anyhow::Result<WireTrajectory> {
    let t = read_trajectory(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(WireTrajectory::from_raw(&t))
}

fn send(server: &str, body: RequestBody) -> anyhow::Result<Response> {
    let mut c = Client::connect(server).with_context(|| format!("connecting to {server}"))?;
    let resp = c.send(body)?;
    if resp.status == Status::Error {
        if let ResponseBody::Error { kind, message, details } = &resp.body {
            let mut msg = format!("{kind:?}: {message}");
            for d in details {
                msg += &format!("\n  {d}");
            }
            bail!(msg);
        }
    }
    Ok(resp)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = FileConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth {
            out,
            permanence,
            users,
            specs,
            sessions,
            drift,
            seed,
        } => {
            let mut c = if permanence { cfg.permanence_corpus } else { cfg.corpus };
            c.n_users = users.unwrap_or(c.n_users);
            c.specs_per_user = specs.unwrap_or(c.specs_per_user);
            c.sessions = sessions.unwrap_or(c.sessions);
            c.drift_step = drift.unwrap_or(c.drift_step);
            c.seed = seed.unwrap_or(c.seed);
            let corpus = gen_corpus(&c)?;
            std::fs::create_dir_all(&out)?;
            save_corpus(&corpus, &out)?;
            println!("wrote {} accounts to {}", corpus.accounts.len(), out.display());
        }
        Command::Enroll { server, id, passcode } => {
            let wire = |t: Vec<RawTrajectory>| t.iter().map(WireTrajectory::from_raw).collect();
            let resp = send(
                &server,
                RequestBody::Register {
                    id_signals: wire(trajectories(&id)?),
                    passcode_signals: wire(trajectories(&passcode)?),
                },
            )?;
            if let ResponseBody::Registered { account_number, .. } = resp.body {
                println!("{account_number}");
            }
        }
        Command::Login {
            server,
            account,
            signal,
        } => {
            let resp = send(
                &server,
                RequestBody::Authenticate {
                    account_number: account,
                    passcode_signal: one(&signal)?,
                },
            )?;
            if let ResponseBody::Authenticated { accept, score } = resp.body {
                println!("{} score {score:.6}", if accept { "accept" } else { "reject" });
                if !accept {
                    std::process::exit(2);
                }
            }
        }
        Command::Identify { server, signal, k } => {
            let resp = send(
                &server,
                RequestBody::Identify {
                    id_signal: one(&signal)?,
                    k,
                },
            )?;
            if let ResponseBody::Identified { result, score, stale } = resp.body {
                let score = score.map_or(String::new(), |s| format!(" score {s:.6}"));
                println!("{result}{score}{}", if stale { " (index stale)" } else { "" });
            }
        }
        Command::Serve {
            listen,
            http,
            store,
            passcode_threshold,
            id_threshold,
        } => {
            cfg.service.passcode_threshold = passcode_threshold.or(cfg.service.passcode_threshold);
            cfg.service.id_threshold = id_threshold.or(cfg.service.id_threshold);
            let svc = Service::open(&store, cfg.service)?;
            svc.start_retrainer();
            if svc.index_stale() {
                log::info!("index is stale; retraining in the background");
                let s = svc.clone();
                std::thread::spawn(move || {
                    if let Err(e) = s.retrain_index() {
                        log::error!("index retraining failed: {e}");
                    }
                });
            }
            let addr = spawn_server(&listen, svc.clone())?;
            println!("listening on {addr} with {} accounts", svc.account_count());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                match http {
                    Some(h) => http::serve_http(h, svc).await,
                    None => {
                        tokio::signal::ctrl_c().await?;
                        Ok(())
                    }
                }
            })?;
        }
        Command::Eval(args) => {
            let report = eval::run(args, cfg)?;
            print!("{}", eval::summary(&report));
        }
        Command::TrainIndex { store } => {
            let svc = Service::open(&store, cfg.service)?;
            match svc.retrain_index()? {
                Some(r) => println!(
                    "trained on {} samples over {} accounts, final training accuracy {:.2}%",
                    r.samples,
                    svc.index_accounts(),
                    100.0 * r.train_accuracy
                ),
                None => bail!("the index needs at least two accounts with the same ID signal width"),
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
