use std::collections::{BTreeMap, HashMap};
use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex, RwLock};
use std::thread::{self, JoinHandle};

use crate::align::{build_template, dtw_align, update_template};
use crate::auth::{calibrate_threshold, distance_series, train_ensemble_from_distances, Decision};
use crate::error::{Error, Result};
use crate::eval::prepare_corpus;
use crate::ident::{
    augment_registration, identify, identify_exhaustive, train_cnn, Identification, TrainReport, Verification,
};
use crate::rng;
use crate::signal::{prepare, DeviceKind, RawTrajectory, Signal};
use crate::synth::{gen_corpus, CorpusConfig, RenderConfig};

use super::config::ServiceConfig;
use super::protocol::{
    read_frame_bytes, write_frame, ErrorKind, Request, RequestBody, Response, ResponseBody, PROTOCOL_VERSION,
    UNIDENTIFIED,
};
use super::store::{now, AccountRecord, Enrollment, IndexModel, Store};

type SignalPool = Arc<Vec<Signal>>;

/// Result of an identification request.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentifyOutcome {
    pub account: Option<String>,
    pub score: Option<f64>,
    /// The index did not cover every account, so all were searched.
    pub stale: bool,
}

/// The login server state shared by all connections.
pub struct Service {
    cfg: ServiceConfig,
    store: Mutex<Store>,
    records: RwLock<BTreeMap<String, Arc<AccountRecord>>>,
    index: RwLock<Option<Arc<IndexModel>>>,
    failures: Mutex<HashMap<String, u32>>,
    cold_start: Mutex<HashMap<(DeviceKind, usize), SignalPool>>,
    retrain_tx: Mutex<Option<mpsc::Sender<()>>>,
    retraining: AtomicBool,
}

fn error_kind(e: &Error) -> ErrorKind {
    match e {
        Error::NotFound(_) => ErrorKind::NotFound,
        Error::Locked(_) => ErrorKind::Locked,
        Error::Protocol(_) | Error::Json(_) => ErrorKind::Protocol,
        Error::Io(_) | Error::Convergence { .. } | Error::TrainingFailure(_) => ErrorKind::Internal,
        _ => ErrorKind::Validation,
    }
}

impl Service {
    /// Opens (or creates) the store at `root` and loads every record and
    /// the last trained index.
    pub fn open(root: &Path, cfg: ServiceConfig) -> Result<Arc<Self>> {
        let store = Store::open(root)?;
        let records = store
            .load_all()?
            .into_iter()
            .map(|r| (r.account_number.clone(), Arc::new(r)))
            .collect();
        let index = store.load_index()?.map(Arc::new);
        Ok(Arc::new(Self {
            cfg,
            store: Mutex::new(store),
            records: RwLock::new(records),
            index: RwLock::new(index),
            failures: Mutex::new(HashMap::new()),
            cold_start: Mutex::new(HashMap::new()),
            retrain_tx: Mutex::new(None),
            retraining: AtomicBool::new(false),
        }))
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn account_count(&self) -> usize {
        self.records.read().expect("records lock").len()
    }

    pub fn record(&self, number: &str) -> Result<Arc<AccountRecord>> {
        self.records
            .read()
            .expect("records lock")
            .get(number)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("account {number}")))
    }

    /// Preprocesses a batch of trajectories, collecting every failure with
    /// its position.
    fn prepare_all(&self, field: &str, trajs: &[RawTrajectory]) -> Result<Vec<Signal>> {
        let mut out = Vec::with_capacity(trajs.len());
        let mut bad = Vec::new();
        for (i, t) in trajs.iter().enumerate() {
            match t.validate().and_then(|_| prepare(t, &self.cfg.preprocess)) {
                Ok(s) => out.push(s),
                Err(e) => bad.push(format!("{field}[{i}]: {e}")),
            }
        }
        if !bad.is_empty() {
            return Err(Error::InvalidSignals(bad));
        }
        Ok(out)
    }

    /// Preprocessed synthetic registration signals of a few writers, used
    /// as negatives before enough real accounts exist.
    fn cold_start_negatives(&self, device: DeviceKind, dims: usize) -> Result<Arc<Vec<Signal>>> {
        let mut cache = self.cold_start.lock().expect("cold-start lock");
        if let Some(v) = cache.get(&(device, dims)) {
            return Ok(v.clone());
        }
        let render_dims = match device {
            DeviceKind::Pointer2d => 2,
            DeviceKind::Camera3d => 3,
            DeviceKind::Precomputed => {
                return Err(Error::InsufficientTrainingData(
                    "no synthetic negatives exist for precomputed signals; register two accounts first".into(),
                ))
            }
        };
        let corpus = gen_corpus(&CorpusConfig {
            n_users: self.cfg.cold_start_writers.max(2),
            test: 0,
            spoofers: 0,
            render: RenderConfig {
                dims: render_dims,
                ..Default::default()
            },
            seed: rng::derive_str(self.cfg.seed, "cold-start"),
            ..Default::default()
        })?;
        let signals: Vec<Signal> = prepare_corpus(&corpus, &self.cfg.preprocess)?
            .into_iter()
            .flat_map(|a| a.reg)
            .filter(|s| s.dims() == dims)
            .collect();
        let signals = Arc::new(signals);
        cache.insert((device, dims), signals.clone());
        Ok(signals)
    }

    fn enroll_field(
        &self,
        signals: &[Signal],
        device: DeviceKind,
        others: Vec<Signal>,
        other_accounts: usize,
        seed: u64,
    ) -> Result<Enrollment> {
        let dims = signals[0].dims();
        let negatives = if other_accounts >= 2 {
            others
        } else {
            self.cold_start_negatives(device, dims)?.as_ref().clone()
        };
        let ecfg = &self.cfg.ensemble;
        let template = build_template(signals, &ecfg.dtw)?;
        let pos = signals
            .iter()
            .map(|s| distance_series(s, &template, &ecfg.dtw))
            .collect::<Result<Vec<_>>>()?;
        let neg = negatives
            .iter()
            .map(|s| distance_series(s, &template, &ecfg.dtw))
            .collect::<Result<Vec<_>>>()?;
        let mut ensemble = train_ensemble_from_distances(&pos, &neg, ecfg, seed)?.ensemble;
        ensemble.threshold = Some(calibrate_threshold(&ensemble, &pos, &neg, ecfg, seed)?);
        Ok(Enrollment {
            template,
            ensemble,
            registration: signals.to_vec(),
        })
    }

    /// Registers a new account and returns its number.
    pub fn register(&self, id: &[RawTrajectory], passcode: &[RawTrajectory]) -> Result<String> {
        let need = self.cfg.registration_signals;
        let mut counts = Vec::new();
        if id.len() != need {
            counts.push(format!("id: got {} signals, need exactly {need}", id.len()));
        }
        if passcode.len() != need {
            counts.push(format!("passcode: got {} signals, need exactly {need}", passcode.len()));
        }
        if !counts.is_empty() {
            return Err(Error::InvalidSignals(counts));
        }
        let id_signals = self.prepare_all("id", id);
        let pass_signals = self.prepare_all("passcode", passcode);
        let (id_signals, pass_signals) = match (id_signals, pass_signals) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(Error::InvalidSignals(mut a)), Err(Error::InvalidSignals(b))) => {
                a.extend(b);
                return Err(Error::InvalidSignals(a));
            }
            (Err(e), _) | (_, Err(e)) => return Err(e),
        };
        for (field, sigs) in [("id", &id_signals), ("passcode", &pass_signals)] {
            if sigs.iter().any(|s| s.dims() != sigs[0].dims()) {
                return Err(Error::InvalidSignals(vec![format!("{field}: signals differ in width")]));
            }
        }

        let (number, label) = self.store.lock().expect("store lock").allocate()?;
        let snapshot: Vec<Arc<AccountRecord>> = self.records.read().expect("records lock").values().cloned().collect();
        let others = |pick: fn(&AccountRecord) -> &Enrollment, dims: usize| {
            let compatible: Vec<&Arc<AccountRecord>> = snapshot
                .iter()
                .filter(|r| pick(r).registration.first().is_some_and(|s| s.dims() == dims))
                .collect();
            let n = compatible.len();
            (
                compatible
                    .into_iter()
                    .flat_map(|r| pick(r).registration.iter().cloned())
                    .collect::<Vec<_>>(),
                n,
            )
        };
        let seed = rng::derive_str(self.cfg.seed, &number);
        let (id_neg, id_n) = others(|r| &r.id, id_signals[0].dims());
        let id_enr = self.enroll_field(&id_signals, id[0].device, id_neg, id_n, rng::derive_str(seed, "id"))?;
        let (pass_neg, pass_n) = others(|r| &r.passcode, pass_signals[0].dims());
        let pass_enr = self.enroll_field(
            &pass_signals,
            passcode[0].device,
            pass_neg,
            pass_n,
            rng::derive_str(seed, "passcode"),
        )?;
        let t = now();
        let record = AccountRecord {
            account_number: number.clone(),
            label,
            id: id_enr,
            passcode: pass_enr,
            created: t,
            updated: t,
        };
        self.store.lock().expect("store lock").put(&record)?;
        self.records
            .write()
            .expect("records lock")
            .insert(number.clone(), Arc::new(record));
        log::info!("registered {number}");
        self.request_retrain();
        Ok(number)
    }

    /// Scores a login request against the account's passcode template.
    pub fn authenticate(&self, number: &str, raw: &RawTrajectory) -> Result<Decision> {
        let record = self.record(number)?;
        if let Some(limit) = self.cfg.lockout_after {
            if self
                .failures
                .lock()
                .expect("failures lock")
                .get(number)
                .copied()
                .unwrap_or(0)
                >= limit
            {
                return Err(Error::Locked(number.to_string()));
            }
        }
        let s = self
            .prepare_all("passcode_signal", std::slice::from_ref(raw))?
            .remove(0);
        let enr = &record.passcode;
        let decision = enr
            .ensemble
            .authenticate(&enr.template, &s, self.cfg.passcode_threshold)?;
        {
            let mut f = self.failures.lock().expect("failures lock");
            if decision.accept {
                f.remove(number);
            } else {
                *f.entry(number.to_string()).or_default() += 1;
            }
        }
        if decision.accept && self.cfg.update_on_accept {
            self.update_passcode_template(number, &s)?;
        }
        Ok(decision)
    }

    fn update_passcode_template(&self, number: &str, s: &Signal) -> Result<()> {
        let mut store = self.store.lock().expect("store lock");
        let mut record = (*self.record(number)?).clone();
        let enr = &mut record.passcode;
        let reference = enr.template.as_signal()?;
        let aligned = dtw_align(s, &reference, &self.cfg.ensemble.dtw)?;
        enr.template = update_template(&enr.template, &aligned.samples, self.cfg.lambda)?;
        record.updated = now();
        store.put(&record)?;
        self.records
            .write()
            .expect("records lock")
            .insert(number.to_string(), Arc::new(record));
        Ok(())
    }

    /// Whether some account is missing from the current index.
    pub fn index_stale(&self) -> bool {
        let records = self.records.read().expect("records lock");
        match &*self.index.read().expect("index lock") {
            None => !records.is_empty(),
            Some(ix) => records.keys().any(|k| !ix.accounts.contains(k)),
        }
    }

    pub fn index_accounts(&self) -> usize {
        self.index
            .read()
            .expect("index lock")
            .as_ref()
            .map_or(0, |ix| ix.accounts.len())
    }

    /// Finds the account whose ID template matches `raw`.
    pub fn identify(&self, raw: &RawTrajectory, k: Option<usize>) -> Result<IdentifyOutcome> {
        let records = self.records.read().expect("records lock").clone();
        if records.is_empty() {
            return Err(Error::NotFound("no accounts are registered".into()));
        }
        let s = self.prepare_all("id_signal", std::slice::from_ref(raw))?.remove(0);
        let by_label: HashMap<u64, &Arc<AccountRecord>> = records.values().map(|r| (r.label, r)).collect();
        let verify = |label: u64| -> Result<Option<Verification>> {
            let Some(r) = by_label.get(&label) else {
                return Ok(None);
            };
            let enr = &r.id;
            if enr.template.dims() != s.dims() {
                return Ok(None);
            }
            let threshold = self
                .cfg
                .id_threshold
                .or(enr.ensemble.threshold)
                .ok_or_else(|| Error::Validation(format!("account {} has no ID threshold", r.account_number)))?;
            let score = enr.ensemble.score(&enr.template, &s)?;
            Ok(Some(Verification { score, threshold }))
        };
        let index = self.index.read().expect("index lock").clone();
        let stale = self.index_stale();
        let usable = index.filter(|ix| !stale && ix.model.arch.in_channels == s.dims());
        let found: Identification = match &usable {
            Some(ix) => identify(&ix.model, &s, k.unwrap_or(self.cfg.k).max(1), verify)?,
            None => identify_exhaustive(
                by_label.keys().copied().collect::<std::collections::BTreeSet<_>>(),
                verify,
            )?,
        };
        Ok(IdentifyOutcome {
            account: found
                .account
                .and_then(|l| by_label.get(&l).map(|r| r.account_number.clone())),
            score: found.score,
            stale: usable.is_none(),
        })
    }

    /// Trains a new index over every account sharing the most common ID
    /// signal width and publishes it. Returns `None` when fewer than two
    /// such accounts exist.
    pub fn retrain_index(&self) -> Result<Option<TrainReport>> {
        let records: Vec<Arc<AccountRecord>> = self.records.read().expect("records lock").values().cloned().collect();
        let mut by_dims: BTreeMap<usize, Vec<&Arc<AccountRecord>>> = BTreeMap::new();
        for r in &records {
            by_dims.entry(r.id.template.dims()).or_default().push(r);
        }
        let Some(group) = by_dims.into_values().max_by_key(Vec::len) else {
            return Ok(None);
        };
        if group.len() < 2 {
            return Ok(None);
        }
        let mut labeled = Vec::with_capacity(group.len() * self.cfg.augment.target);
        for r in &group {
            let aug = augment_registration(
                &r.id.registration,
                &self.cfg.augment,
                rng::derive(self.cfg.seed, r.label),
            )?;
            labeled.extend(aug.signals.into_iter().map(|s| (s, r.label)));
        }
        let (model, report) = train_cnn(&labeled, &self.cfg.cnn)?;
        let index = IndexModel {
            model,
            accounts: group.iter().map(|r| r.account_number.clone()).collect(),
            trained_at: now(),
        };
        self.store.lock().expect("store lock").save_index(&index)?;
        *self.index.write().expect("index lock") = Some(Arc::new(index));
        log::info!("index retrained over {} accounts", group.len());
        Ok(Some(report))
    }

    /// Starts the background thread that retrains the index whenever
    /// registrations arrive. Requests that pile up during one training run
    /// collapse into a single follow-up run.
    pub fn start_retrainer(self: &Arc<Self>) -> JoinHandle<()> {
        let (tx, rx) = mpsc::channel::<()>();
        *self.retrain_tx.lock().expect("retrain lock") = Some(tx);
        let weak = Arc::downgrade(self);
        thread::spawn(move || {
            while rx.recv().is_ok() {
                while rx.try_recv().is_ok() {}
                let Some(svc) = weak.upgrade() else { break };
                svc.retraining.store(true, Ordering::SeqCst);
                if let Err(e) = svc.retrain_index() {
                    log::error!("index retraining failed: {e}");
                }
                svc.retraining.store(false, Ordering::SeqCst);
            }
        })
    }

    /// Stops the retrainer after any run in progress.
    pub fn stop_retrainer(&self) {
        self.retrain_tx.lock().expect("retrain lock").take();
    }

    pub fn retraining(&self) -> bool {
        self.retraining.load(Ordering::SeqCst)
    }

    fn request_retrain(&self) {
        if !self.cfg.auto_retrain {
            return;
        }
        if let Some(tx) = &*self.retrain_tx.lock().expect("retrain lock") {
            let _ = tx.send(());
        }
    }

    /// Answers one request. Failures become error responses.
    pub fn handle(&self, req: Request) -> Response {
        let nonce = req.nonce.clone();
        if req.version != PROTOCOL_VERSION {
            return Response::error(
                nonce,
                ErrorKind::Protocol,
                format!(
                    "protocol version {} is not supported (server speaks {PROTOCOL_VERSION})",
                    req.version
                ),
                Vec::new(),
            );
        }
        match self.dispatch(req.body) {
            Ok(body) => Response::new(nonce, body),
            Err(e) => {
                let details = match &e {
                    Error::InvalidSignals(d) => d.clone(),
                    _ => Vec::new(),
                };
                Response::error(nonce, error_kind(&e), e.to_string(), details)
            }
        }
    }

    fn dispatch(&self, body: RequestBody) -> Result<ResponseBody> {
        match body {
            RequestBody::Register {
                id_signals,
                passcode_signals,
            } => {
                let id = to_raw_all("id_signals", &id_signals)?;
                let pass = to_raw_all("passcode_signals", &passcode_signals)?;
                let account_number = self.register(&id, &pass)?;
                Ok(ResponseBody::Registered {
                    account_number,
                    index_stale: self.index_stale(),
                })
            }
            RequestBody::Authenticate {
                account_number,
                passcode_signal,
            } => {
                self.record(&account_number)?;
                let raw = to_raw_all("passcode_signal", std::slice::from_ref(&passcode_signal))?.remove(0);
                let d = self.authenticate(&account_number, &raw)?;
                Ok(ResponseBody::Authenticated {
                    accept: d.accept,
                    score: d.score,
                })
            }
            RequestBody::Identify { id_signal, k } => {
                let raw = to_raw_all("id_signal", std::slice::from_ref(&id_signal))?.remove(0);
                let out = self.identify(&raw, k)?;
                Ok(ResponseBody::Identified {
                    result: out.account.unwrap_or_else(|| UNIDENTIFIED.to_string()),
                    score: out.score,
                    stale: out.stale,
                })
            }
            RequestBody::Status => Ok(ResponseBody::Status {
                accounts: self.account_count(),
                index_accounts: self.index_accounts(),
                index_stale: self.index_stale(),
            }),
        }
    }
}

fn to_raw_all(field: &str, wire: &[super::protocol::WireTrajectory]) -> Result<Vec<RawTrajectory>> {
    let mut out = Vec::with_capacity(wire.len());
    let mut bad = Vec::new();
    for (i, w) in wire.iter().enumerate() {
        match w.to_raw() {
            Ok(r) => out.push(r),
            Err(e) => bad.push(format!("{field}[{i}]: {e}")),
        }
    }
    if !bad.is_empty() {
        return Err(Error::InvalidSignals(bad));
    }
    Ok(out)
}

fn serve_connection(stream: TcpStream, svc: &Service) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    while let Some(bytes) = read_frame_bytes(&mut reader)? {
        let resp = match serde_json::from_slice::<Request>(&bytes) {
            Ok(req) => svc.handle(req),
            Err(e) => {
                let nonce = serde_json::from_slice::<serde_json::Value>(&bytes)
                    .ok()
                    .and_then(|v| v.get("nonce").and_then(|n| n.as_str()).map(str::to_string))
                    .unwrap_or_default();
                Response::error(nonce, ErrorKind::Protocol, format!("bad request: {e}"), Vec::new())
            }
        };
        write_frame(&mut writer, &resp)?;
    }
    Ok(())
}

/// Accepts connections forever, one thread per connection.
pub fn serve(listener: TcpListener, svc: Arc<Service>) -> Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let svc = svc.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = serve_connection(stream, &svc) {
                log::warn!("connection {peer:?}: {e}");
            }
        });
    }
    Ok(())
}

/// Binds `addr` and serves in a background thread; returns the bound
/// address.
pub fn spawn_server(addr: &str, svc: Arc<Service>) -> Result<SocketAddr> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    thread::spawn(move || {
        if let Err(e) = serve(listener, svc) {
            log::error!("server stopped: {e}");
        }
    });
    Ok(local)
}
