//! The secure gateway: bearer-token check, content routing, PHI scrubbing,
//! then a retried forward to the inference server.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clinserve_core::phi::Scrubber;
use clinserve_core::wire::{ErrorBody, InferRequestWire, InferResponseWire};
use serde::{Deserialize, Serialize};
use tokio::sync::{watch, Semaphore};
use tokio::task::JoinHandle;

use crate::auth::{unix_now, verify_token};
use crate::inference::{bind, serve_http};
use crate::phi_service::{PreprocessRequest, PreprocessResponse};
use crate::retry::{forward_with_retries, AttemptError, GatewayError, RetryPolicy};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PhiMode {
    Inline,
    /// Base URL of a PHI preprocessing service.
    Remote(String),
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub listen: SocketAddr,
    /// Base URL of the inference server's HTTP listener.
    pub upstream: String,
    pub key: Vec<u8>,
    pub retry: RetryPolicy,
    pub phi: PhiMode,
    pub max_upstream_connections: usize,
    pub model: String,
}

impl GatewayConfig {
    pub fn new(upstream: impl Into<String>, key: impl Into<Vec<u8>>) -> Self {
        Self {
            listen: ([0, 0, 0, 0], 9000).into(),
            upstream: upstream.into(),
            key: key.into(),
            retry: RetryPolicy::default(),
            phi: PhiMode::Inline,
            max_upstream_connections: 128,
            model: "sentiment".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    NlpThenInference,
    CvStub,
}

/// Maps a declared content kind onto its pipeline.
pub fn route(content_kind: &str) -> Result<Route, String> {
    match content_kind {
        "text" => Ok(Route::NlpThenInference),
        "image" => Ok(Route::CvStub),
        other => Err(format!("unsupported content_kind `{other}`")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyzeRequest {
    pub content_kind: String,
    #[serde(default)]
    pub text: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatewayTiming {
    pub total: f64,
    pub phi: f64,
    pub upstream: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeResponse {
    #[serde(flatten)]
    pub inference: InferResponseWire,
    pub phi_spans_removed: usize,
    pub gateway_timing_ms: GatewayTiming,
}

struct GatewayState {
    config: GatewayConfig,
    client: reqwest::Client,
    permits: Semaphore,
    next_id: AtomicU64,
}

fn json_error(code: u16, msg: impl Into<String>) -> Response {
    let code = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (code, Json(ErrorBody { error: msg.into() })).into_response()
}

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer")
        .filter(|rest| rest.is_empty() || rest.starts_with(' '))
        .map(str::trim)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn classify(e: reqwest::Error) -> AttemptError {
    if e.is_connect() {
        AttemptError::Connect(e.to_string())
    } else {
        AttemptError::Transport(e.to_string())
    }
}

struct Scrubbed {
    text: String,
    spans: usize,
}

impl GatewayState {
    async fn scrub(&self, text: &str) -> Result<Scrubbed, Response> {
        match &self.config.phi {
            PhiMode::Inline => Scrubber::shared()
                .deidentify(text)
                .map(|d| Scrubbed { spans: d.spans.len(), text: d.scrubbed })
                .map_err(|e| json_error(400, e.to_string())),
            PhiMode::Remote(base) => {
                let url = format!("{}/v1/preprocess", base.trim_end_matches('/'));
                let body = serde_json::to_vec(&PreprocessRequest { text: text.to_string() })
                    .expect("request serializes");
                let call = self
                    .client
                    .post(url)
                    .header(header::CONTENT_TYPE, "application/json")
                    .body(body)
                    .send();
                let resp = tokio::time::timeout(self.config.retry.per_try_timeout, call)
                    .await
                    .map_err(|_| json_error(504, "PHI service timed out"))?
                    .map_err(|e| json_error(502, format!("PHI service unavailable: {e}")))?;
                let status = resp.status();
                let bytes = resp
                    .bytes()
                    .await
                    .map_err(|e| json_error(502, format!("PHI service unavailable: {e}")))?;
                if status == StatusCode::BAD_REQUEST {
                    return Err((StatusCode::BAD_REQUEST, bytes).into_response());
                }
                if !status.is_success() {
                    return Err(json_error(502, format!("PHI service returned {status}")));
                }
                let parsed: PreprocessResponse = serde_json::from_slice(&bytes)
                    .map_err(|e| json_error(502, format!("bad PHI service response: {e}")))?;
                Ok(Scrubbed { spans: parsed.spans.len(), text: parsed.scrubbed })
            }
        }
    }

    async fn forward(&self, body: Vec<u8>) -> Result<((StatusCode, Bytes), u32), GatewayError> {
        let url = format!("{}/v1/infer", self.config.upstream.trim_end_matches('/'));
        forward_with_retries(&self.config.retry, |_| {
            let req = self
                .client
                .post(&url)
                .header(header::CONTENT_TYPE, "application/json")
                .body(body.clone());
            async move {
                // queue here rather than open unbounded upstream connections
                let _permit = self.permits.acquire().await.expect("semaphore never closed");
                let resp = req.send().await.map_err(classify)?;
                let status = resp.status();
                let bytes = resp.bytes().await.map_err(classify)?;
                Ok((status, bytes))
            }
        })
        .await
    }

    async fn analyze(&self, headers: &HeaderMap, body: &[u8]) -> Response {
        let started = Instant::now();
        let Some(token) = bearer(headers) else {
            return json_error(401, "missing bearer token");
        };
        if let Err(e) = verify_token(token, &self.config.key, unix_now()) {
            return json_error(e.http_code(), e.as_str());
        }
        let req: AnalyzeRequest = match serde_json::from_slice(body) {
            Ok(r) => r,
            Err(e) => return json_error(400, format!("invalid body: {e}")),
        };
        match route(&req.content_kind) {
            Ok(Route::NlpThenInference) => {}
            Ok(Route::CvStub) => return json_error(501, "image analysis is not implemented"),
            Err(msg) => return json_error(400, msg),
        }
        let Some(text) = req.text else {
            return json_error(400, "text content requires a `text` field");
        };

        let phi_started = Instant::now();
        let scrubbed = match self.scrub(&text).await {
            Ok(s) => s,
            Err(resp) => return resp,
        };
        let phi_elapsed = phi_started.elapsed();

        let upstream_body = serde_json::to_vec(&InferRequestWire::new(
            self.config.model.clone(),
            vec![scrubbed.text],
        ))
        .expect("request serializes");
        let upstream_started = Instant::now();
        let (status, bytes) = match self.forward(upstream_body).await {
            Ok((resp, _attempts)) => resp,
            Err(e) => return json_error(e.http_code(), e.to_string()),
        };
        let upstream_elapsed = upstream_started.elapsed();

        if status != StatusCode::OK {
            return (status, [(header::CONTENT_TYPE, "application/json")], bytes).into_response();
        }
        let inference: InferResponseWire = match serde_json::from_slice(&bytes) {
            Ok(r) => r,
            Err(e) => return json_error(502, format!("bad upstream response: {e}")),
        };
        Json(AnalyzeResponse {
            inference,
            phi_spans_removed: scrubbed.spans,
            gateway_timing_ms: GatewayTiming {
                total: ms(started.elapsed()),
                phi: ms(phi_elapsed),
                upstream: ms(upstream_elapsed),
            },
        })
        .into_response()
    }
}

async fn http_analyze(
    State(state): State<Arc<GatewayState>>,
    headers: HeaderMap,
    body: Bytes,
) -> Response {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let started = Instant::now();
    let resp = state.analyze(&headers, &body).await;
    tracing::info!(
        request_id = id,
        status = resp.status().as_u16(),
        elapsed_ms = ms(started.elapsed()),
        "analyze"
    );
    resp
}

async fn http_live() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "live": true }))
}

/// Ready when the inference server reports ready.
async fn http_ready(State(state): State<Arc<GatewayState>>) -> Response {
    let url = format!("{}/health/ready", state.config.upstream.trim_end_matches('/'));
    let probe = tokio::time::timeout(state.config.retry.per_try_timeout, state.client.get(url).send()).await;
    let ready = matches!(probe, Ok(Ok(r)) if r.status().is_success());
    let code = if ready { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (code, Json(serde_json::json!({ "live": true, "ready": ready }))).into_response()
}

pub struct GatewayHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl GatewayHandle {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

pub async fn start(config: GatewayConfig) -> io::Result<GatewayHandle> {
    let listener = bind(config.listen).await?;
    let addr = listener.local_addr()?;
    let client = reqwest::Client::builder()
        .pool_max_idle_per_host(config.max_upstream_connections)
        .tcp_nodelay(true)
        .build()
        .map_err(io::Error::other)?;
    let state = Arc::new(GatewayState {
        permits: Semaphore::new(config.max_upstream_connections.max(1)),
        config,
        client,
        next_id: AtomicU64::new(0),
    });
    let router = Router::new()
        .route("/v1/analyze", post(http_analyze))
        .route("/health/live", get(http_live))
        .route("/health/ready", get(http_ready))
        .with_state(state);
    let (stop, stop_rx) = watch::channel(false);
    let task = serve_http(listener, router, stop_rx);
    Ok(GatewayHandle { addr, stop, task })
}
