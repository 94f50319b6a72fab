//! Standalone PHI preprocessing service: de-identification plus
//! normalization over HTTP.

use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use clinserve_core::model::DEFAULT_MAX_SEQ_LEN;
use clinserve_core::phi::{normalize, Scrubber};
use clinserve_core::wire::ErrorBody;
use clinserve_core::PhiSpan;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;
use tokio::task::JoinHandle;

use crate::inference::{bind, serve_http};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessRequest {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessResponse {
    pub scrubbed: String,
    pub spans: Vec<PhiSpan>,
    pub tokens: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiHealth {
    pub live: bool,
    pub ready: bool,
}

/// De-identifies `text`, then normalizes the scrubbed result.
pub fn preprocess(text: &str, max_seq_len: usize) -> Result<PreprocessResponse, String> {
    let out = Scrubber::shared().deidentify(text).map_err(|e| e.to_string())?;
    let tokens = normalize(&out.scrubbed, max_seq_len).tokens().to_vec();
    Ok(PreprocessResponse {
        scrubbed: out.scrubbed,
        spans: out.spans,
        tokens,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct PhiServiceConfig {
    pub listen: SocketAddr,
    pub max_seq_len: usize,
}

impl Default for PhiServiceConfig {
    fn default() -> Self {
        Self {
            listen: ([0, 0, 0, 0], 9100).into(),
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
        }
    }
}

struct PhiState {
    max_seq_len: usize,
    ready: AtomicBool,
}

fn bad_request(msg: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(ErrorBody { error: msg })).into_response()
}

async fn http_preprocess(State(state): State<Arc<PhiState>>, body: Bytes) -> Response {
    let req: PreprocessRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return bad_request(format!("invalid body: {e}")),
    };
    match preprocess(&req.text, state.max_seq_len) {
        Ok(resp) => Json(resp).into_response(),
        Err(msg) => bad_request(msg),
    }
}

fn health(state: &PhiState) -> PhiHealth {
    PhiHealth {
        live: true,
        ready: state.ready.load(Ordering::SeqCst),
    }
}

async fn http_live(State(state): State<Arc<PhiState>>) -> Json<PhiHealth> {
    Json(health(&state))
}

async fn http_ready(State(state): State<Arc<PhiState>>) -> Response {
    let h = health(&state);
    let code = if h.ready { StatusCode::OK } else { StatusCode::SERVICE_UNAVAILABLE };
    (code, Json(h)).into_response()
}

pub struct PhiServiceHandle {
    pub addr: SocketAddr,
    stop: watch::Sender<bool>,
    task: JoinHandle<()>,
}

impl PhiServiceHandle {
    pub async fn shutdown(self) {
        let _ = self.stop.send(true);
        let _ = self.task.await;
    }
}

/// Binds the listener; readiness flips once the rule table is compiled.
pub async fn start(config: PhiServiceConfig) -> io::Result<PhiServiceHandle> {
    let listener = bind(config.listen).await?;
    let addr = listener.local_addr()?;
    let state = Arc::new(PhiState {
        max_seq_len: config.max_seq_len,
        ready: AtomicBool::new(false),
    });
    let router = Router::new()
        .route("/v1/preprocess", post(http_preprocess))
        .route("/health/live", get(http_live))
        .route("/health/ready", get(http_ready))
        .with_state(state.clone());
    let (stop, stop_rx) = watch::channel(false);
    let task = serve_http(listener, router, stop_rx);
    tokio::spawn(async move {
        if tokio::task::spawn_blocking(|| Scrubber::shared().rules().len())
            .await
            .is_ok()
        {
            state.ready.store(true, Ordering::SeqCst);
        }
    });
    Ok(PhiServiceHandle { addr, stop, task })
}
