//! HTTP service: submit runs, inspect them, stream layer events, trigger benchmarks.
//!
//! Routes:
//!
//! | method | path | body / result |
//! |---|---|---|
//! | POST | `/api/query` | `{"question", "source"?, "provider"?, "seed"?, "n"?}` → 202 `{"run_id"}` |
//! | GET | `/api/runs?limit&offset` | newest-first page of run summaries |
//! | GET | `/api/runs/{id}` | full run record |
//! | GET | `/api/runs/{id}/events` | server-sent layer events, replayed then live |
//! | POST | `/api/bench` | `{"suite"?, "mode"?, "runs"?}` → 202 `{"bench_id"}` |
//! | GET | `/api/bench/{id}` | progress and, once finished, the report |
//! | GET | `/api/health` | `{"status":"ok"}` |
//!
//! Runs and events are appended to `runs-YYYY-MM-DD.jsonl` and `events-YYYY-MM-DD.jsonl`
//! in the store directory; the in-memory index is rebuilt from those files at startup.

use std::collections::HashMap;
use std::convert::Infallible;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, OnceLock};

use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use futures::stream::{self, Stream, StreamExt};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tokio::sync::broadcast;

use crate::bench::{self, BenchConfig, BenchmarkReport, SuiteQuery};
use crate::datasources::crossref::{CrossrefConfig, CrossrefSource, DEFAULT_MAILTO};
use crate::datasources::synthetic::SyntheticSource;
use crate::datasources::DataSource;
use crate::pipeline::{new_run_id, EventSink, LayerEvent, LayerEventKind, Pipeline};
use crate::provider::{
    provider_from_config, LlmProvider, MockProvider, ProviderConfig, ProviderKind,
    DEFAULT_API_KEY_VAR,
};
use crate::tokens::ledger_total;
use crate::types::{FailureReason, RunLedger, RunRecord, RunStatus, UserQuery};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_N: usize = 10_000;
/// Largest synthetic source a request may ask for.
pub const MAX_LOCAL_N: usize = 2_000_000;
const DEFAULT_PAGE: usize = 20;
const MAX_PAGE: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Local,
    Crossref,
}

impl SourceKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "local" => Some(Self::Local),
            "crossref" => Some(Self::Crossref),
            _ => None,
        }
    }
}

pub fn parse_provider_kind(s: &str) -> Option<ProviderKind> {
    match s {
        "mock" => Some(ProviderKind::Mock),
        "live" => Some(ProviderKind::Live),
        _ => None,
    }
}

/// Service settings. [`ServiceConfig::from_env`] reads:
///
/// `RES_LISTEN_ADDR` (default `127.0.0.1`), `RES_PORT` (8080), `RES_PROVIDER` (`mock`),
/// `RES_MODEL_ID`, `RES_API_KEY_VAR` (`ANTHROPIC_API_KEY`), `RES_CROSSREF_MAILTO`,
/// `RES_STORE_DIR` (`./res-store`), `RES_SUITE_DIR` (`./suites`).
#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub listen_addr: String,
    pub port: u16,
    pub store_dir: PathBuf,
    pub suite_dir: PathBuf,
    pub provider: ProviderConfig,
    pub crossref_mailto: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen_addr: "127.0.0.1".into(),
            port: DEFAULT_PORT,
            store_dir: PathBuf::from("res-store"),
            suite_dir: PathBuf::from("suites"),
            provider: ProviderConfig::default(),
            crossref_mailto: DEFAULT_MAILTO.into(),
        }
    }
}

impl ServiceConfig {
    pub fn from_env() -> Result<Self, String> {
        Self::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Self, String> {
        let mut c = Self::default();
        if let Some(v) = get("RES_LISTEN_ADDR") {
            c.listen_addr = v;
        }
        if let Some(v) = get("RES_PORT") {
            c.port = v.parse().map_err(|_| format!("RES_PORT: invalid port {v:?}"))?;
        }
        if let Some(v) = get("RES_PROVIDER") {
            c.provider.kind =
                parse_provider_kind(&v).ok_or_else(|| format!("RES_PROVIDER: unknown provider {v:?}"))?;
        }
        if let Some(v) = get("RES_MODEL_ID") {
            c.provider.model_id = v;
        }
        c.provider.api_key_ref = get("RES_API_KEY_VAR").unwrap_or_else(|| DEFAULT_API_KEY_VAR.into());
        if let Some(v) = get("RES_CROSSREF_MAILTO") {
            c.crossref_mailto = v;
        }
        if let Some(v) = get("RES_STORE_DIR") {
            c.store_dir = v.into();
        }
        if let Some(v) = get("RES_SUITE_DIR") {
            c.suite_dir = v.into();
        }
        Ok(c)
    }

    pub fn socket_addr(&self) -> Result<SocketAddr, String> {
        format!("{}:{}", self.listen_addr, self.port)
            .parse()
            .map_err(|e| format!("invalid listen address: {e}"))
    }
}

// ---------------------------------------------------------------------------
// Store
// ---------------------------------------------------------------------------

/// Append-only JSON-lines store with an in-memory index.
pub struct RunStore {
    dir: PathBuf,
    write_lock: Mutex<()>,
    runs: Mutex<HashMap<String, RunRecord>>,
    events: Mutex<HashMap<String, Vec<LayerEvent>>>,
}

fn day_file(dir: &Path, prefix: &str, at: DateTime<Utc>) -> PathBuf {
    dir.join(format!("{prefix}-{}.jsonl", at.format("%Y-%m-%d")))
}

fn read_lines<T: serde::de::DeserializeOwned>(dir: &Path, prefix: &str) -> std::io::Result<Vec<T>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(&format!("{prefix}-")) && n.ends_with(".jsonl"))
        })
        .collect();
    files.sort();
    let mut out = Vec::new();
    for path in files {
        for line in BufReader::new(File::open(&path)?).lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str(&line) {
                Ok(v) => out.push(v),
                Err(e) => tracing::warn!("skipping unreadable line in {}: {e}", path.display()),
            }
        }
    }
    Ok(out)
}

impl RunStore {
    /// Opens (creating if needed) the store at `dir` and loads every stored run and event.
    pub fn open(dir: impl Into<PathBuf>) -> std::io::Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut runs = HashMap::new();
        for r in read_lines::<RunRecord>(&dir, "runs")? {
            runs.insert(r.run_id.clone(), r);
        }
        let mut events: HashMap<String, Vec<LayerEvent>> = HashMap::new();
        for e in read_lines::<LayerEvent>(&dir, "events")? {
            events.entry(e.run_id.clone()).or_default().push(e);
        }
        Ok(Self {
            dir,
            write_lock: Mutex::new(()),
            runs: Mutex::new(runs),
            events: Mutex::new(events),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn append(&self, prefix: &str, line: &str) -> std::io::Result<()> {
        let _guard = self.write_lock.lock();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(day_file(&self.dir, prefix, Utc::now()))?;
        f.write_all(line.as_bytes())?;
        f.write_all(b"\n")?;
        f.flush()
    }

    pub fn persist_run(&self, record: &RunRecord) -> std::io::Result<()> {
        let line = serde_json::to_string(record).map_err(std::io::Error::other)?;
        self.append("runs", &line)?;
        self.runs.lock().insert(record.run_id.clone(), record.clone());
        Ok(())
    }

    pub fn persist_event(&self, event: &LayerEvent) -> std::io::Result<()> {
        let line = serde_json::to_string(event).map_err(std::io::Error::other)?;
        self.append("events", &line)?;
        self.events
            .lock()
            .entry(event.run_id.clone())
            .or_default()
            .push(event.clone());
        Ok(())
    }

    pub fn get_run(&self, run_id: &str) -> Option<RunRecord> {
        self.runs.lock().get(run_id).cloned()
    }

    pub fn events(&self, run_id: &str) -> Option<Vec<LayerEvent>> {
        self.events.lock().get(run_id).cloned()
    }

    /// Newest first by start time, ties broken by id.
    pub fn list_runs(&self, limit: usize, offset: usize) -> (Vec<RunRecord>, usize) {
        let runs = self.runs.lock();
        let mut all: Vec<&RunRecord> = runs.values().collect();
        all.sort_by(|a, b| {
            b.started_at
                .cmp(&a.started_at)
                .then_with(|| a.run_id.cmp(&b.run_id))
        });
        let total = all.len();
        (all.into_iter().skip(offset).take(limit).cloned().collect(), total)
    }
}

// ---------------------------------------------------------------------------
// Live run channels
// ---------------------------------------------------------------------------

struct RunChannel {
    state: Mutex<ChannelState>,
    tx: broadcast::Sender<LayerEvent>,
}

struct ChannelState {
    events: Vec<LayerEvent>,
    finished: bool,
}

impl RunChannel {
    fn new() -> Self {
        Self {
            state: Mutex::new(ChannelState {
                events: Vec::new(),
                finished: false,
            }),
            tx: broadcast::channel(64).0,
        }
    }
}

struct ChannelSink {
    channel: Arc<RunChannel>,
    store: Arc<RunStore>,
}

impl EventSink for ChannelSink {
    fn emit(&self, event: LayerEvent) {
        if let Err(e) = self.store.persist_event(&event) {
            tracing::error!("failed to persist event for {}: {e}", event.run_id);
        }
        let mut state = self.channel.state.lock();
        state.finished |= event.event.is_terminal();
        state.events.push(event.clone());
        let _ = self.channel.tx.send(event);
    }
}

// ---------------------------------------------------------------------------
// State
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BenchStatus {
    Running,
    Completed,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchState {
    pub bench_id: String,
    pub status: BenchStatus,
    pub completed_runs: usize,
    pub total_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<BenchmarkReport>,
}

struct BenchEntry {
    state: BenchState,
    progress: Arc<AtomicUsize>,
}

struct Inner {
    config: ServiceConfig,
    store: Arc<RunStore>,
    channels: Mutex<HashMap<String, Arc<RunChannel>>>,
    local_sources: Mutex<HashMap<(u64, usize), Arc<SyntheticSource>>>,
    crossref: OnceLock<Result<Arc<CrossrefSource>, String>>,
    live_provider: OnceLock<Result<Arc<dyn LlmProvider>, String>>,
    mock_provider: Arc<dyn LlmProvider>,
    benches: Mutex<HashMap<String, BenchEntry>>,
}

/// Shared service state; cheap to clone.
#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    pub fn open(config: ServiceConfig) -> std::io::Result<Self> {
        Self::with_mock(config, Arc::new(MockProvider::new()))
    }

    /// Like [`AppState::open`], answering mock-provider requests with `mock`.
    pub fn with_mock(config: ServiceConfig, mock: Arc<dyn LlmProvider>) -> std::io::Result<Self> {
        let store = Arc::new(RunStore::open(&config.store_dir)?);
        Ok(Self(Arc::new(Inner {
            config,
            store,
            channels: Mutex::new(HashMap::new()),
            local_sources: Mutex::new(HashMap::new()),
            crossref: OnceLock::new(),
            live_provider: OnceLock::new(),
            mock_provider: mock,
            benches: Mutex::new(HashMap::new()),
        })))
    }

    pub fn store(&self) -> &RunStore {
        &self.0.store
    }

    fn local_source(&self, seed: u64, n: usize) -> Arc<SyntheticSource> {
        let mut cache = self.0.local_sources.lock();
        cache
            .entry((seed, n))
            .or_insert_with(|| Arc::new(SyntheticSource::generate(seed, n)))
            .clone()
    }

    /// Blocking: may construct an HTTP client.
    fn source(&self, kind: SourceKind, seed: u64, n: usize) -> Result<Arc<dyn DataSource>, String> {
        match kind {
            SourceKind::Local => Ok(self.local_source(seed, n)),
            SourceKind::Crossref => self
                .0
                .crossref
                .get_or_init(|| {
                    let config = CrossrefConfig {
                        mailto: self.0.config.crossref_mailto.clone(),
                        ..CrossrefConfig::default()
                    };
                    CrossrefSource::live(config)
                        .map(Arc::new)
                        .map_err(|e| e.to_string())
                })
                .clone()
                .map(|s| s as Arc<dyn DataSource>),
        }
    }

    /// Blocking: may construct an HTTP client.
    fn provider(&self, kind: ProviderKind) -> Result<Arc<dyn LlmProvider>, String> {
        match kind {
            ProviderKind::Mock => Ok(self.0.mock_provider.clone()),
            ProviderKind::Live => self
                .0
                .live_provider
                .get_or_init(|| {
                    let config = ProviderConfig {
                        kind: ProviderKind::Live,
                        ..self.0.config.provider.clone()
                    };
                    provider_from_config(&config).map_err(|e| e.to_string())
                })
                .clone(),
        }
    }

    fn check_live_key(&self) -> Result<(), String> {
        let config = ProviderConfig {
            kind: ProviderKind::Live,
            ..self.0.config.provider.clone()
        };
        config.api_key().map(|_| ()).map_err(|e| e.to_string())
    }

    /// Starts a pipeline run on a blocking worker and returns its id.
    pub fn submit(&self, query: UserQuery, options: RunOptions) -> String {
        let run_id = new_run_id();
        let channel = Arc::new(RunChannel::new());
        self.0.channels.lock().insert(run_id.clone(), channel.clone());
        let state = self.clone();
        let id = run_id.clone();
        tokio::task::spawn_blocking(move || state.execute_run(&id, query, options, channel));
        run_id
    }

    fn execute_run(&self, run_id: &str, query: UserQuery, options: RunOptions, channel: Arc<RunChannel>) {
        let sink = ChannelSink {
            channel,
            store: self.0.store.clone(),
        };
        let resolved = self
            .source(options.source, options.seed, options.n)
            .and_then(|s| self.provider(options.provider).map(|p| (s, p)));
        let record = match resolved {
            Ok((source, provider)) => {
                Pipeline::default().run_observed(run_id, &query, source.as_ref(), provider.as_ref(), &sink)
            }
            Err(detail) => {
                let now = Utc::now();
                let reason = if detail.contains("crossref") || options.source == SourceKind::Crossref {
                    FailureReason::SourceError
                } else {
                    FailureReason::ProviderError
                };
                sink.emit(LayerEvent {
                    run_id: run_id.to_string(),
                    event: LayerEventKind::RunFailed,
                    payload: json!({ "failure_reason": reason, "detail": detail }),
                    at: now,
                });
                RunRecord {
                    run_id: run_id.to_string(),
                    query,
                    plan: None,
                    summary: None,
                    narrative: None,
                    ledger: RunLedger::default(),
                    started_at: now,
                    finished_at: now,
                    status: RunStatus::Failed,
                    failure_reason: Some(reason),
                    failure_detail: Some(detail),
                }
            }
        };
        if let Err(e) = self.0.store.persist_run(&record) {
            tracing::error!("failed to persist run {run_id}: {e}");
        }
        self.0.channels.lock().remove(run_id);
    }

    fn start_bench(&self, suite: Vec<SuiteQuery>, mode: ProviderKind, runs: u32) -> String {
        let bench_id = new_run_id();
        let progress = Arc::new(AtomicUsize::new(0));
        self.0.benches.lock().insert(
            bench_id.clone(),
            BenchEntry {
                state: BenchState {
                    bench_id: bench_id.clone(),
                    status: BenchStatus::Running,
                    completed_runs: 0,
                    total_runs: suite.len() * runs as usize,
                    error: None,
                    report: None,
                },
                progress: progress.clone(),
            },
        );
        let state = self.clone();
        let id = bench_id.clone();
        tokio::task::spawn_blocking(move || {
            let source = state.local_source(DEFAULT_SEED, DEFAULT_N);
            let result = state.provider(mode).and_then(|provider| {
                let config = BenchConfig {
                    runs_per_query: runs,
                    progress: Some(progress),
                    ..BenchConfig::default()
                };
                bench::run_benchmark(&suite, &config, source.as_ref(), provider.as_ref(), source.records())
                    .map_err(|e| e.to_string())
            });
            if let Ok(report) = &result {
                let path = state.0.store.dir().join(format!("bench-{id}.json"));
                if let Err(e) = serde_json::to_vec_pretty(report)
                    .map_err(std::io::Error::other)
                    .and_then(|bytes| std::fs::write(&path, bytes))
                {
                    tracing::error!("failed to write {}: {e}", path.display());
                }
            }
            let mut benches = state.0.benches.lock();
            if let Some(entry) = benches.get_mut(&id) {
                match result {
                    Ok(report) => {
                        entry.state.status = BenchStatus::Completed;
                        entry.state.report = Some(report);
                    }
                    Err(e) => {
                        entry.state.status = BenchStatus::Failed;
                        entry.state.error = Some(e);
                    }
                }
            }
        });
        bench_id
    }

    fn bench_state(&self, id: &str) -> Option<BenchState> {
        let benches = self.0.benches.lock();
        benches.get(id).map(|entry| {
            let mut s = entry.state.clone();
            s.completed_runs = entry.progress.load(Ordering::Relaxed);
            s
        })
    }

    fn resolve_suite(&self, name: &str) -> Result<Vec<SuiteQuery>, String> {
        if name == "default" {
            return Ok(bench::default_suite());
        }
        let valid = !name.is_empty()
            && name
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
        if !valid {
            return Err(format!("invalid suite name {name:?}"));
        }
        let path = self.0.config.suite_dir.join(format!("{name}.json"));
        bench::load_suite(&path).map_err(|e| e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Handlers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub source: SourceKind,
    pub provider: ProviderKind,
    pub seed: u64,
    pub n: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            source: SourceKind::Local,
            provider: ProviderKind::Mock,
            seed: DEFAULT_SEED,
            n: DEFAULT_N,
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct QueryRequest {
    pub question: String,
    pub source: Option<String>,
    pub provider: Option<String>,
    pub seed: Option<u64>,
    pub n: Option<usize>,
}

#[derive(Debug, Deserialize)]
pub struct BenchRequest {
    pub suite: Option<String>,
    pub mode: Option<String>,
    pub runs: Option<u32>,
}

#[derive(Debug, Deserialize)]
pub struct Page {
    pub limit: Option<usize>,
    pub offset: Option<usize>,
}

#[derive(Debug, Serialize)]
pub struct RunSummary {
    pub run_id: String,
    pub query: String,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intent: Option<crate::types::Intent>,
    pub total_tokens: u64,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

fn error(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(json!({ "error": message.into() }))).into_response()
}

async fn health() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn submit_query(State(state): State<AppState>, body: Result<Json<QueryRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let query = match UserQuery::new(&req.question) {
        Ok(q) => q,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string()),
    };
    let mut options = RunOptions::default();
    if let Some(s) = &req.source {
        match SourceKind::parse(s) {
            Some(k) => options.source = k,
            None => return error(StatusCode::BAD_REQUEST, format!("unknown source {s:?}")),
        }
    }
    if let Some(p) = &req.provider {
        match parse_provider_kind(p) {
            Some(k) => options.provider = k,
            None => return error(StatusCode::BAD_REQUEST, format!("unknown provider {p:?}")),
        }
    }
    if options.provider == ProviderKind::Live {
        if let Err(e) = state.check_live_key() {
            return error(StatusCode::BAD_REQUEST, e);
        }
    }
    options.seed = req.seed.unwrap_or(DEFAULT_SEED);
    options.n = req.n.unwrap_or(DEFAULT_N);
    if options.n > MAX_LOCAL_N {
        return error(StatusCode::BAD_REQUEST, format!("n must be at most {MAX_LOCAL_N}"));
    }
    if let Err(e) = std::fs::create_dir_all(state.store().dir()) {
        return error(StatusCode::INTERNAL_SERVER_ERROR, format!("store unavailable: {e}"));
    }
    let run_id = state.submit(query, options);
    (StatusCode::ACCEPTED, Json(json!({ "run_id": run_id }))).into_response()
}

async fn list_runs(State(state): State<AppState>, Query(page): Query<Page>) -> Json<Value> {
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let (runs, total) = state.store().list_runs(limit, page.offset.unwrap_or(0));
    let runs: Vec<RunSummary> = runs
        .into_iter()
        .map(|r| RunSummary {
            total_tokens: ledger_total(&r.ledger),
            intent: r.plan.as_ref().map(|p| p.intent),
            run_id: r.run_id,
            query: r.query.into(),
            status: r.status,
            started_at: r.started_at,
            finished_at: r.finished_at,
        })
        .collect();
    Json(json!({ "runs": runs, "total": total }))
}

async fn get_run(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    if let Some(record) = state.store().get_run(&id) {
        return Json(record).into_response();
    }
    if state.0.channels.lock().contains_key(&id) {
        return Json(json!({ "run_id": id, "status": "running" })).into_response();
    }
    error(StatusCode::NOT_FOUND, format!("unknown run {id}"))
}

fn sse_event(e: &LayerEvent) -> Result<Event, Infallible> {
    Ok(Event::default()
        .event(e.event.as_str())
        .data(serde_json::to_string(e).unwrap_or_default()))
}

async fn stream_events(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    let channel = state.0.channels.lock().get(&id).cloned();
    let (replay, live) = match channel {
        Some(ch) => {
            let st = ch.state.lock();
            let rx = (!st.finished).then(|| ch.tx.subscribe());
            (st.events.clone(), rx)
        }
        None => match state.store().events(&id) {
            Some(events) => (events, None),
            None if state.store().get_run(&id).is_some() => (Vec::new(), None),
            None => return error(StatusCode::NOT_FOUND, format!("unknown run {id}")),
        },
    };
    let replayed = stream::iter(replay.iter().map(sse_event).collect::<Vec<_>>());
    let tail = stream::unfold(live, |rx| async move {
        let mut rx = rx?;
        loop {
            match rx.recv().await {
                Ok(e) => {
                    let next = (!e.event.is_terminal()).then_some(rx);
                    return Some((sse_event(&e), next));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    let body: std::pin::Pin<Box<dyn Stream<Item = Result<Event, Infallible>> + Send>> =
        Box::pin(replayed.chain(tail));
    Sse::new(body).keep_alive(KeepAlive::default()).into_response()
}

async fn submit_bench(State(state): State<AppState>, body: Result<Json<BenchRequest>, axum::extract::rejection::JsonRejection>) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text()),
    };
    let mode = match req.mode.as_deref().map(parse_provider_kind) {
        None => ProviderKind::Mock,
        Some(Some(k)) => k,
        Some(None) => return error(StatusCode::BAD_REQUEST, "mode must be mock or live"),
    };
    if mode == ProviderKind::Live {
        if let Err(e) = state.check_live_key() {
            return error(StatusCode::BAD_REQUEST, e);
        }
    }
    let runs = req.runs.unwrap_or(5);
    if !(1..=100).contains(&runs) {
        return error(StatusCode::BAD_REQUEST, "runs must be in 1..=100");
    }
    let suite = match state.resolve_suite(req.suite.as_deref().unwrap_or("default")) {
        Ok(s) => s,
        Err(e) => return error(StatusCode::BAD_REQUEST, e),
    };
    let bench_id = state.start_bench(suite, mode, runs);
    (StatusCode::ACCEPTED, Json(json!({ "bench_id": bench_id }))).into_response()
}

async fn get_bench(State(state): State<AppState>, UrlPath(id): UrlPath<String>) -> Response {
    match state.bench_state(&id) {
        Some(s) => Json(s).into_response(),
        None => error(StatusCode::NOT_FOUND, format!("unknown benchmark {id}")),
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/query", post(submit_query))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/events", get(stream_events))
        .route("/api/bench", post(submit_bench))
        .route("/api/bench/{id}", get(get_bench))
        .with_state(state)
}

/// Serves on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_from_lookup() {
        let env: HashMap<&str, &str> = [
            ("RES_PORT", "9001"),
            ("RES_PROVIDER", "live"),
            ("RES_STORE_DIR", "/tmp/x"),
            ("RES_API_KEY_VAR", "MY_KEY"),
        ]
        .into();
        let c = ServiceConfig::from_lookup(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.port, 9001);
        assert_eq!(c.provider.kind, ProviderKind::Live);
        assert_eq!(c.store_dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.provider.api_key_ref, "MY_KEY");
        assert!(ServiceConfig::from_lookup(|k| (k == "RES_PORT").then(|| "99999".into())).is_err());
        assert!(ServiceConfig::from_lookup(|k| (k == "RES_PROVIDER").then(|| "gpt".into())).is_err());
    }

    #[test]
    fn store_round_trip_and_paging() {
        let dir = tempfile::tempdir().unwrap();
        let store = RunStore::open(dir.path()).unwrap();
        assert_eq!(store.list_runs(10, 0).1, 0);
        let source = SyntheticSource::generate(1, 200);
        let mock = MockProvider::new();
        let mut ids = Vec::new();
        for q in ["Compare CRISPR vs graphene", "Top 3 venues on graphene", "How many papers on cancer?"] {
            let r = Pipeline::default().run(&UserQuery::new(q).unwrap(), &source, &mock);
            store.persist_run(&r).unwrap();
            ids.push(r.run_id);
            std::thread::sleep(std::time::Duration::from_millis(2));
        }
        let reopened = RunStore::open(dir.path()).unwrap();
        assert_eq!(reopened.get_run(&ids[0]), store.get_run(&ids[0]));
        let (page, total) = reopened.list_runs(2, 0);
        assert_eq!(total, 3);
        assert_eq!(page.iter().map(|r| &r.run_id).collect::<Vec<_>>(), [&ids[2], &ids[1]]);
    }
}
