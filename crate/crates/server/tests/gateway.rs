mod common;

use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::routing::post;
use axum::Router;
use clinserve_core::phi::Scrubber;
use clinserve_oracles::tokens::{mutated_tokens, payload, valid_token, HEADER};
use clinserve_server::auth::{unix_now, verify_token};
use clinserve_server::phi_service::{self, PhiServiceConfig};
use clinserve_server::{gateway, GatewayConfig, PhiMode, RetryPolicy};
use common::*;
use serde_json::json;
use tokio::net::TcpListener;

const KEY: &[u8] = b"gateway-test-key";

/// Upstream that counts accepted connections and never answers.
async fn stalling_upstream() -> (SocketAddr, Arc<AtomicUsize>) {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let accepted = Arc::new(AtomicUsize::new(0));
    let counter = accepted.clone();
    tokio::spawn(async move {
        let mut held = Vec::new();
        while let Ok((stream, _)) = listener.accept().await {
            counter.fetch_add(1, Ordering::SeqCst);
            held.push(stream);
        }
    });
    (addr, accepted)
}

/// Upstream that records request bodies, counts connections and answers
/// with a fixed inference response.
async fn recording_upstream() -> (SocketAddr, Arc<AtomicUsize>, Arc<Mutex<Vec<Bytes>>>) {
    use axum::serve::ListenerExt;
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let connections = Arc::new(AtomicUsize::new(0));
    let bodies = Arc::new(Mutex::new(Vec::new()));
    let counter = connections.clone();
    let listener = listener.tap_io(move |_| {
        counter.fetch_add(1, Ordering::SeqCst);
    });
    let store = bodies.clone();
    let app = Router::new().route(
        "/v1/infer",
        post(move |body: Bytes| {
            let store = store.clone();
            async move {
                store.lock().unwrap().push(body);
                axum::Json(json!({
                    "outputs": [{"label": "neutral", "score": 0.0}],
                    "model_version": 1,
                    "server_timing_ms": {"queue_wait": 0.0, "execution": 0.0}
                }))
            }
        }),
    );
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (addr, connections, bodies)
}

async fn start_gateway(upstream: SocketAddr, retry: RetryPolicy, phi: PhiMode) -> gateway::GatewayHandle {
    let mut cfg = GatewayConfig::new(format!("http://{upstream}"), KEY.to_vec());
    cfg.listen = ([127, 0, 0, 1], 0).into();
    cfg.retry = retry;
    cfg.phi = phi;
    gateway::start(cfg).await.unwrap()
}

async fn analyze(gw: SocketAddr, token: Option<&str>, body: serde_json::Value) -> (u16, serde_json::Value) {
    let client = reqwest::Client::new();
    let mut req = client
        .post(format!("http://{gw}/v1/analyze"))
        .header("content-type", "application/json")
        .body(body.to_string());
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let resp = req.send().await.unwrap();
    let code = resp.status().as_u16();
    let bytes = resp.bytes().await.unwrap();
    (code, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

fn text(t: &str) -> serde_json::Value {
    json!({"content_kind": "text", "text": t})
}

#[test]
fn offline_signed_tokens_verify() {
    let now = unix_now();
    let token = valid_token(b"k", now);
    let claims = verify_token(&token, b"k", now).unwrap();
    assert_eq!(claims.sub, "clinic-1");
    assert_eq!(claims.exp, now + 3600);

    // one payload byte flipped, re-encoded with the original signature
    let segs: Vec<&str> = token.split('.').collect();
    let tampered_payload = payload("clinic-2", "infer", now + 3600);
    let tampered = format!(
        "{}.{}.{}",
        segs[0],
        clinserve_oracles::hmac::b64url(tampered_payload.as_bytes()),
        segs[2]
    );
    assert_eq!(
        verify_token(&tampered, b"k", now).unwrap_err().as_str(),
        "bad_signature"
    );
    let expired = clinserve_oracles::hmac::sign_token(b"k", HEADER, &payload("a", "infer", now - 1));
    assert_eq!(verify_token(&expired, b"k", now).unwrap_err().as_str(), "expired");
}

#[test]
fn mutated_token_corpus_is_rejected_by_category() {
    let now = unix_now();
    let corpus = mutated_tokens(KEY, now);
    assert_eq!(corpus.len(), 100);
    for (token, want) in &corpus {
        let got = verify_token(token, KEY, now).unwrap_err();
        assert_eq!(got.as_str(), *want, "{token}");
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn auth_failures_never_reach_upstream() {
    let (upstream, connections, _) = recording_upstream().await;
    let gw = start_gateway(upstream, RetryPolicy::default(), PhiMode::Inline).await;
    let (code, _) = analyze(gw.addr, None, text("hello")).await;
    assert_eq!(code, 401);
    for (token, want) in mutated_tokens(KEY, unix_now()) {
        let (code, body) = analyze(gw.addr, Some(&token), text("hello")).await;
        let want_code = if want == "forbidden" { 403 } else { 401 };
        assert_eq!(code, want_code, "{token}");
        assert_eq!(body["error"], want);
    }
    assert_eq!(connections.load(Ordering::SeqCst), 0);

    let (code, _) = analyze(gw.addr, Some(&valid_token(KEY, unix_now())), text("hello")).await;
    assert_eq!(code, 200);
    assert_eq!(connections.load(Ordering::SeqCst), 1);
    gw.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn routes_by_content_kind() {
    let (upstream, connections, _) = recording_upstream().await;
    let gw = start_gateway(upstream, RetryPolicy::default(), PhiMode::Inline).await;
    let token = valid_token(KEY, unix_now());
    let (code, _) = analyze(gw.addr, Some(&token), json!({"content_kind": "image"})).await;
    assert_eq!(code, 501);
    let (code, _) = analyze(gw.addr, Some(&token), json!({"content_kind": "audio", "text": "x"})).await;
    assert_eq!(code, 400);
    let (code, _) = analyze(gw.addr, Some(&token), json!({"content_kind": "text"})).await;
    assert_eq!(code, 400);
    assert_eq!(connections.load(Ordering::SeqCst), 0);
    gw.shutdown().await;
}

const PHI_CORPUS: &[&str] = &[
    "patient is doing good, SSN 123-45-6789",
    "call 555-123-4567 or (555) 987 6543 tomorrow",
    "email jane.doe@example.org about MRN 00123456",
    "seen 2023-04-01 and again on 4/15/23",
    "MRN:1234567 SSN 987-65-4321 phone 555 222 3333",
];

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn nothing_sent_upstream_matches_a_scrub_rule() {
    let (upstream, _, bodies) = recording_upstream().await;
    let phi = phi_service::start(PhiServiceConfig {
        listen: ([127, 0, 0, 1], 0).into(),
        ..Default::default()
    })
    .await
    .unwrap();
    let inline = start_gateway(upstream, RetryPolicy::default(), PhiMode::Inline).await;
    let remote = start_gateway(
        upstream,
        RetryPolicy::default(),
        PhiMode::Remote(format!("http://{}", phi.addr)),
    )
    .await;
    let token = valid_token(KEY, unix_now());
    for gw in [inline.addr, remote.addr] {
        for t in PHI_CORPUS {
            let (code, body) = analyze(gw, Some(&token), text(t)).await;
            assert_eq!(code, 200);
            assert!(body["phi_spans_removed"].as_u64().unwrap() >= 1);
        }
    }
    let bodies = bodies.lock().unwrap();
    assert_eq!(bodies.len(), 2 * PHI_CORPUS.len());
    let scrubber = Scrubber::shared();
    for b in bodies.iter() {
        let sent = std::str::from_utf8(b).unwrap();
        assert!(!scrubber.has_match(sent), "PHI leaked: {sent}");
    }
    inline.shutdown().await;
    remote.shutdown().await;
    phi.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn end_to_end_through_real_server() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    let server = start_server(dir.path(), engine(4, 1.0, 1), false).await;
    let gw = start_gateway(server.http_addr, RetryPolicy::default(), PhiMode::Inline).await;
    let token = valid_token(KEY, unix_now());
    let (code, body) = analyze(gw.addr, Some(&token), text("patient is doing good, SSN 123-45-6789")).await;
    assert_eq!(code, 200);
    assert_eq!(body["phi_spans_removed"], 1);
    // scrubbed text "patient is doing good, SSN [SSN]" has six tokens, one hit
    assert_eq!(body["outputs"][0]["label"], "positive");
    assert_eq!(body["outputs"][0]["score"].as_f64().unwrap(), 1.0 / 6.0);
    assert!(body["gateway_timing_ms"]["total"].as_f64().unwrap() > 0.0);

    let direct = post_json(
        &reqwest::Client::new(),
        &http_url(&server, "/v1/infer"),
        r#"{"model":"sentiment","inputs":["patient is doing good, SSN [SSN]"]}"#,
    )
    .await
    .1;
    assert_eq!(body["outputs"], direct["outputs"]);
    assert_eq!(body["model_version"], direct["model_version"]);

    let ready = reqwest::get(format!("http://{}/health/ready", gw.addr)).await.unwrap();
    assert_eq!(ready.status(), 200);
    gw.shutdown().await;
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn upstream_down_is_bad_gateway() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap()
    };
    let policy = RetryPolicy::from_ms(2, 200.0, 2000.0, 5.0).unwrap();
    let gw = start_gateway(port, policy, PhiMode::Inline).await;
    let (code, body) = analyze(gw.addr, Some(&valid_token(KEY, unix_now())), text("good")).await;
    assert_eq!(code, 502);
    assert!(body["error"].as_str().unwrap().contains("3 attempts"));
    gw.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn stalled_upstream_times_out_on_schedule() {
    let (upstream, accepted) = stalling_upstream().await;
    let policy = RetryPolicy::from_ms(5, 50.0, 120.0, 0.0).unwrap();
    let gw = start_gateway(upstream, policy, PhiMode::Inline).await;
    let token = valid_token(KEY, unix_now());
    let started = Instant::now();
    let (code, _) = analyze(gw.addr, Some(&token), text("good")).await;
    let elapsed = started.elapsed();
    assert_eq!(code, 504);
    // two full tries plus a partial third; 20 ms slack over the 150 ms schedule
    assert!(elapsed <= Duration::from_millis(170), "{elapsed:?}");
    assert!(elapsed >= Duration::from_millis(120), "{elapsed:?}");
    assert!(accepted.load(Ordering::SeqCst) <= 3);
    gw.shutdown().await;
}
