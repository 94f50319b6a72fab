//! The inference server: JSON/HTTP and framed-RPC listeners in front of one
//! batching engine per loaded model version, plus probes, metrics and reload.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clinserve_core::batching::{BatchExecutor, EngineConfig, EngineStats, ENGINE_CONFIG_KEYS};
use clinserve_core::config::{ConfigError, FlatConfig};
use clinserve_core::model::{
    infer_batch, valid_model_name, CostProfile, LoadOptions, ModelRegistry, SharedRegistry,
};
use clinserve_core::phi::normalize;
use clinserve_core::wire::{
    ErrorBody, InferRequestWire, InferResponseWire, OutputWire, ServerTiming, Status,
};
use clinserve_core::{Engine, EngineError, ModelDescriptor, NormalizedInput, SentimentOutput};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::metrics::{RequestMetrics, UNATTRIBUTED};
use crate::rpc;

/// Server config file keys beyond the engine's.
pub const SERVER_CONFIG_KEYS: &[&str] = &["admin.enabled", "model.cost_profile"];

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub registry: PathBuf,
    pub engine: EngineConfig,
    pub load: LoadOptions,
    pub admin_enabled: bool,
    pub http: SocketAddr,
    pub rpc: SocketAddr,
    pub metrics: SocketAddr,
}

impl ServerConfig {
    /// Defaults: ports 8000/8001/8002 on all interfaces, admin disabled.
    pub fn new(registry: impl Into<PathBuf>) -> Self {
        Self {
            registry: registry.into(),
            engine: EngineConfig::default(),
            load: LoadOptions::default(),
            admin_enabled: false,
            http: ([0, 0, 0, 0], 8000).into(),
            rpc: ([0, 0, 0, 0], 8001).into(),
            metrics: ([0, 0, 0, 0], 8002).into(),
        }
    }

    /// Loopback with OS-assigned ports.
    pub fn ephemeral(registry: impl Into<PathBuf>) -> Self {
        let any: SocketAddr = ([127, 0, 0, 1], 0).into();
        Self {
            http: any,
            rpc: any,
            metrics: any,
            ..Self::new(registry)
        }
    }

    pub fn apply_flat(&mut self, cfg: &FlatConfig) -> Result<(), ConfigError> {
        let allowed: Vec<&str> = ENGINE_CONFIG_KEYS
            .iter()
            .chain(SERVER_CONFIG_KEYS)
            .copied()
            .collect();
        cfg.reject_unknown(&allowed)?;
        self.engine = EngineConfig::from_flat(cfg)?;
        if let Some(admin) = cfg.parse_opt::<bool>("admin.enabled")? {
            self.admin_enabled = admin;
        }
        if let Some(profile) = cfg.parse_opt::<CostProfile>("model.cost_profile")? {
            self.load.cost_override = Some(profile.cost());
        }
        Ok(())
    }
}

pub struct ModelExecutor(Arc<ModelDescriptor>);

impl BatchExecutor for ModelExecutor {
    type Input = NormalizedInput;
    type Output = SentimentOutput;

    fn execute(&self, inputs: &[NormalizedInput]) -> Result<Vec<SentimentOutput>, String> {
        infer_batch(&self.0, inputs).map_err(|e| e.to_string())
    }
}

type ModelEngine = Engine<ModelExecutor>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    pub live: bool,
    pub ready: bool,
    pub models_ready: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReloadReport {
    pub old: BTreeMap<String, u32>,
    pub new: BTreeMap<String, u32>,
    pub warnings: usize,
}

/// Result of one inference request, shared by both listeners.
pub(crate) struct Handled {
    pub model: String,
    pub status: Status,
    pub body: Result<InferResponseWire, String>,
}

impl Handled {
    fn error(model: impl Into<String>, status: Status, message: impl Into<String>) -> Self {
        Self {
            model: model.into(),
            status,
            body: Err(message.into()),
        }
    }
}

pub(crate) struct AppState {
    config: ServerConfig,
    registry: SharedRegistry,
    engines: Mutex<HashMap<(String, u32), Arc<ModelEngine>>>,
    // engines replaced by a reload that changed a version's descriptor
    retired: Mutex<Vec<(String, Arc<ModelEngine>)>>,
    known_models: Mutex<BTreeSet<String>>,
    loaded: AtomicBool,
    stopping: AtomicBool,
    reload_lock: tokio::sync::Mutex<()>,
    pub(crate) metrics: RequestMetrics,
}

impl AppState {
    fn new(config: ServerConfig) -> Self {
        let registry = SharedRegistry::new(ModelRegistry::empty(&config.registry));
        Self {
            config,
            registry,
            engines: Mutex::new(HashMap::new()),
            retired: Mutex::new(Vec::new()),
            known_models: Mutex::new(BTreeSet::new()),
            loaded: AtomicBool::new(false),
            stopping: AtomicBool::new(false),
            reload_lock: tokio::sync::Mutex::new(()),
            metrics: RequestMetrics::default(),
        }
    }

    fn engine_for(&self, model: &Arc<ModelDescriptor>) -> Arc<ModelEngine> {
        let key = (model.name.clone(), model.version);
        let mut engines = self.engines.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(engine) = engines.get(&key) {
            if *engine.executor().0 == **model {
                return engine.clone();
            }
        }
        let engine = Arc::new(Engine::start(self.config.engine, ModelExecutor(model.clone())));
        if let Some(old) = engines.insert(key, engine.clone()) {
            self.retired
                .lock()
                .unwrap_or_else(|p| p.into_inner())
                .push((model.name.clone(), old));
        }
        engine
    }

    /// Starts engines for every latest version, then makes `next` current.
    fn install(&self, next: ModelRegistry) -> Arc<ModelRegistry> {
        for (name, version) in next.latest() {
            if let Some(model) = next.get(name, *version) {
                self.engine_for(model);
            }
        }
        self.known_models
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .extend(next.model_names().map(str::to_string));
        let old = self.registry.swap(next);
        self.loaded.store(true, Ordering::SeqCst);
        old
    }

    pub(crate) fn health(&self) -> Health {
        let snapshot = self.registry.snapshot();
        let models_ready = self
            .known_models
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .iter()
            .map(|name| (name.clone(), snapshot.latest_version(name).is_some()))
            .collect();
        Health {
            live: true,
            ready: self.loaded.load(Ordering::SeqCst)
                && !self.stopping.load(Ordering::SeqCst)
                && !snapshot.is_empty(),
            models_ready,
        }
    }

    fn engine_stats(&self) -> BTreeMap<String, EngineStats> {
        let mut out: BTreeMap<String, EngineStats> = BTreeMap::new();
        let mut add = |name: &str, s: EngineStats| {
            let e = out.entry(name.to_string()).or_default();
            e.batches += s.batches;
            e.batch_size_sum += s.batch_size_sum;
            e.queue_depth += s.queue_depth;
        };
        for ((name, _), engine) in self.engines.lock().unwrap_or_else(|p| p.into_inner()).iter() {
            add(name, engine.stats());
        }
        for (name, engine) in self.retired.lock().unwrap_or_else(|p| p.into_inner()).iter() {
            add(name, engine.stats());
        }
        out
    }

    pub(crate) fn render_metrics(&self) -> String {
        let snapshot = self.registry.snapshot();
        self.metrics
            .render(snapshot.model_names(), &self.engine_stats())
    }

    async fn reload(&self) -> Result<ReloadReport, String> {
        let _serialized = self.reload_lock.lock().await;
        let current = self.registry.snapshot();
        let root = self.config.registry.clone();
        let base = current.clone();
        let next = tokio::task::spawn_blocking(move || base.reload(root))
            .await
            .map_err(|e| format!("reload task failed: {e}"))?
            .map_err(|e| e.to_string())?;
        for w in next.warnings() {
            tracing::warn!(path = %w.path.display(), "{}", w.message);
        }
        let report = ReloadReport {
            old: current.latest().clone(),
            new: next.latest().clone(),
            warnings: next.warnings().len(),
        };
        self.install(next);
        Ok(report)
    }

    /// Runs one request body end to end and records its outcome.
    pub(crate) async fn handle(&self, body: &[u8]) -> Handled {
        let started = Instant::now();
        let handled = self.infer(body).await;
        self.metrics
            .record(&handled.model, handled.status, started.elapsed());
        handled
    }

    async fn infer(&self, body: &[u8]) -> Handled {
        if body.is_empty() {
            return Handled::error(UNATTRIBUTED, Status::BadRequest, "empty request body");
        }
        let req: InferRequestWire = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => {
                return Handled::error(UNATTRIBUTED, Status::BadRequest, format!("invalid body: {e}"))
            }
        };
        let label = if valid_model_name(&req.model) {
            req.model.clone()
        } else {
            UNATTRIBUTED.to_string()
        };
        if let Err(msg) = req.validate() {
            return Handled::error(label, Status::BadRequest, msg);
        }
        let snapshot = self.registry.snapshot();
        let Some(model) = snapshot.resolve(&req.model, req.version).cloned() else {
            let msg = match req.version {
                Some(v) => format!("model `{}` version {v} not found", req.model),
                None => format!("model `{}` not found", req.model),
            };
            return Handled::error(label, Status::NotFound, msg);
        };
        drop(snapshot);

        let engine = self.engine_for(&model);
        let tickets: Vec<_> = req
            .inputs
            .iter()
            .map(|text| engine.submit(normalize(text, model.max_seq_len)))
            .collect();
        let mut outputs = Vec::with_capacity(tickets.len());
        let mut queue_wait = Duration::ZERO;
        let mut execution = Duration::ZERO;
        let mut failure: Option<(Status, String)> = None;
        for ticket in tickets {
            match ticket.await {
                Ok(Ok(done)) => {
                    queue_wait = queue_wait.max(done.queue_wait);
                    execution = execution.max(done.execution);
                    outputs.push(OutputWire {
                        label: done.output.label,
                        score: done.output.score,
                    });
                }
                Ok(Err(err)) => {
                    let status = match err {
                        EngineError::Overload | EngineError::Shutdown => Status::Unavailable,
                        EngineError::Internal(_) => Status::Internal,
                    };
                    failure.get_or_insert((status, err.to_string()));
                }
                Err(_) => {
                    failure.get_or_insert((Status::Internal, "reply dropped".into()));
                }
            }
        }
        if let Some((status, msg)) = failure {
            return Handled::error(label, status, msg);
        }
        Handled {
            model: label,
            status: Status::Ok,
            body: Ok(InferResponseWire {
                outputs,
                model_version: model.version,
                server_timing_ms: ServerTiming {
                    queue_wait: queue_wait.as_secs_f64() * 1000.0,
                    execution: execution.as_secs_f64() * 1000.0,
                },
            }),
        }
    }

    fn shutdown_engines(&self) {
        let engines: Vec<_> = self
            .engines
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .drain()
            .map(|(_, e)| e)
            .collect();
        let retired: Vec<_> = self
            .retired
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .drain(..)
            .map(|(_, e)| e)
            .collect();
        for engine in engines.into_iter().chain(retired) {
            engine.shutdown();
        }
    }
}

fn error_response(status: Status, message: String) -> Response {
    let code = StatusCode::from_u16(status.http_code()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(ErrorBody { error: message })).into_response()
}

async fn http_infer(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let handled = state.handle(&body).await;
    match handled.body {
        Ok(resp) => Json(resp).into_response(),
        Err(msg) => error_response(handled.status, msg),
    }
}

async fn http_live(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(state.health())
}

async fn http_ready(State(state): State<Arc<AppState>>) -> Response {
    let health = state.health();
    let code = if health.ready {
        StatusCode::OK
    } else {
        StatusCode::SERVICE_UNAVAILABLE
    };
    (code, Json(health)).into_response()
}

async fn http_reload(State(state): State<Arc<AppState>>) -> Response {
    if !state.config.admin_enabled {
        return (
            StatusCode::NOT_FOUND,
            Json(ErrorBody { error: "admin endpoint disabled".into() }),
        )
            .into_response();
    }
    match state.reload().await {
        Ok(report) => {
            tracing::info!(old = ?report.old, new = ?report.new, "registry reloaded");
            Json(report).into_response()
        }
        Err(msg) => {
            tracing::error!("reload failed: {msg}");
            error_response(Status::Internal, msg)
        }
    }
}

async fn http_metrics(State(state): State<Arc<AppState>>) -> Response {
    (
        [(header::CONTENT_TYPE, "text/plain; version=0.0.4")],
        state.render_metrics(),
    )
        .into_response()
}

pub(crate) fn shutdown_signal(mut rx: watch::Receiver<bool>) -> impl std::future::Future<Output = ()> {
    async move {
        let _ = rx.wait_for(|stop| *stop).await;
    }
}

pub(crate) async fn bind(addr: SocketAddr) -> io::Result<TcpListener> {
    TcpListener::bind(addr)
        .await
        .map_err(|e| io::Error::new(e.kind(), format!("bind {addr}: {e}")))
}

pub(crate) fn serve_http(
    listener: TcpListener,
    router: Router,
    stop: watch::Receiver<bool>,
) -> JoinHandle<()> {
    use axum::serve::ListenerExt;
    let listener = listener.tap_io(|tcp| {
        let _ = tcp.set_nodelay(true);
    });
    tokio::spawn(async move {
        if let Err(e) = axum::serve(listener, router)
            .with_graceful_shutdown(shutdown_signal(stop))
            .await
        {
            tracing::error!("http listener failed: {e}");
        }
    })
}

/// A running server. Dropping it without calling
/// [`shutdown`](ServerHandle::shutdown) leaves the listeners running until
/// the runtime exits.
pub struct ServerHandle {
    pub http_addr: SocketAddr,
    pub rpc_addr: SocketAddr,
    pub metrics_addr: SocketAddr,
    state: Arc<AppState>,
    stop: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn health(&self) -> Health {
        self.state.health()
    }

    pub fn metrics_text(&self) -> String {
        self.state.render_metrics()
    }

    pub fn requests_total(&self) -> u64 {
        self.state.metrics.total_requests()
    }

    /// Polls readiness until it holds or `timeout` passes.
    pub async fn wait_ready(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        loop {
            if self.state.health().ready {
                return true;
            }
            if Instant::now() >= deadline {
                return false;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
    }

    pub async fn reload(&self) -> Result<ReloadReport, String> {
        self.state.reload().await
    }

    pub async fn shutdown(self) {
        self.state.stopping.store(true, Ordering::SeqCst);
        let _ = self.stop.send(true);
        for task in self.tasks {
            let _ = task.await;
        }
        let state = self.state.clone();
        let _ = tokio::task::spawn_blocking(move || state.shutdown_engines()).await;
    }
}

/// Binds all three listeners, then loads the registry in the background.
/// The server is live as soon as this returns and ready once the registry
/// holds at least one model.
pub async fn start(config: ServerConfig) -> io::Result<ServerHandle> {
    let http = bind(config.http).await?;
    let rpc_listener = bind(config.rpc).await?;
    let metrics = bind(config.metrics).await?;
    let http_addr = http.local_addr()?;
    let rpc_addr = rpc_listener.local_addr()?;
    let metrics_addr = metrics.local_addr()?;

    let state = Arc::new(AppState::new(config));
    let (stop, stop_rx) = watch::channel(false);

    let api = Router::new()
        .route("/v1/infer", post(http_infer))
        .route("/health/live", get(http_live))
        .route("/health/ready", get(http_ready))
        .route("/v1/admin/reload", post(http_reload))
        .with_state(state.clone());
    let metrics_router = Router::new()
        .route("/metrics", get(http_metrics))
        .route("/health/live", get(http_live))
        .route("/health/ready", get(http_ready))
        .with_state(state.clone());

    let tasks = vec![
        serve_http(http, api, stop_rx.clone()),
        serve_http(metrics, metrics_router, stop_rx.clone()),
        tokio::spawn(rpc::serve(rpc_listener, state.clone(), stop_rx)),
    ];

    let loader = state.clone();
    tokio::spawn(async move {
        let root = loader.config.registry.clone();
        let options = loader.config.load;
        let loaded =
            tokio::task::spawn_blocking(move || ModelRegistry::load_with(root, options)).await;
        match loaded {
            Ok(Ok(registry)) => {
                for w in registry.warnings() {
                    tracing::warn!(path = %w.path.display(), "{}", w.message);
                }
                tracing::info!(models = ?registry.latest(), "registry loaded");
                loader.install(registry);
            }
            Ok(Err(e)) => tracing::error!("{e}"),
            Err(e) => tracing::error!("registry load task failed: {e}"),
        }
    });

    Ok(ServerHandle {
        http_addr,
        rpc_addr,
        metrics_addr,
        state,
        stop,
        tasks,
    })
}
