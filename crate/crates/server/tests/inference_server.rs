mod common;

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use clinserve_core::wire::{read_frame, write_frame, FrameError, RpcResponse};
use clinserve_server::{inference, ServerConfig};
use common::*;
use rand::{rngs::StdRng, Rng, SeedableRng};
use serde_json::json;
use tokio::io::AsyncWriteExt;
use tokio::net::TcpStream;

// independent re-statement of the lexicon scoring rule
fn lexicon_oracle(text: &str) -> (&'static str, f64) {
    let polarity = |t: &str| match t {
        "good" | "stable" => 1,
        "great" => 2,
        "bad" | "pain" => -1,
        "awful" => -2,
        _ => 0,
    };
    let lower = text.to_ascii_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(128)
        .collect();
    let s: i64 = tokens.iter().map(|t| polarity(t)).sum();
    let label = if s > 0 {
        "positive"
    } else if s < 0 {
        "negative"
    } else {
        "neutral"
    };
    let score = (s.abs() as f64 / tokens.len().max(1) as f64).min(1.0);
    (label, score)
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn infers_latest_version_and_maps_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    write_model(dir.path(), "sentiment", 2, 0.0, 0.0);
    let server = start_server(dir.path(), engine(16, 1.0, 1), false).await;
    let client = reqwest::Client::new();
    let url = http_url(&server, "/v1/infer");

    let (code, body) = post_json(&client, &url, r#"{"model":"sentiment","inputs":["good good bad"]}"#).await;
    assert_eq!(code, 200);
    assert_eq!(body["model_version"], 2);
    assert_eq!(body["outputs"][0]["label"], "positive");
    assert_eq!(body["outputs"][0]["score"].as_f64().unwrap(), 1.0 / 3.0);
    assert!(body["server_timing_ms"]["queue_wait"].as_f64().unwrap() >= 0.0);

    let (code, body) =
        post_json(&client, &url, r#"{"model":"sentiment","version":1,"inputs":["the a"]}"#).await;
    assert_eq!(code, 200);
    assert_eq!(body["model_version"], 1);
    assert_eq!(body["outputs"][0], json!({"label":"neutral","score":0.0}));

    let cases = [
        (r#"{"model":"nonexistent","inputs":["x"]}"#, 404),
        (r#"{"model":"sentiment","version":9,"inputs":["x"]}"#, 404),
        (r#"{"model":"sentiment","inputs":[]}"#, 400),
        (r#"{"model":"sentiment","inputs":["x"],"extra":1}"#, 400),
        (r#"{"model":"sentiment","version":0,"inputs":["x"]}"#, 400),
        ("not json", 400),
        ("", 400),
    ];
    for (body, want) in cases {
        let (code, resp) = post_json(&client, &url, body).await;
        assert_eq!(code, want, "{body}");
        assert!(resp["error"].is_string());
    }
    let big = json!({"model":"sentiment","inputs":["x".repeat(16 * 1024 + 1)]}).to_string();
    assert_eq!(post_json(&client, &url, &big).await.0, 400);

    let metrics = scrape(&server).await;
    let total: f64 = metrics
        .iter()
        .filter(|(k, _)| k.starts_with("inference_requests_total"))
        .map(|(_, v)| v)
        .sum();
    assert_eq!(total, 10.0);
    assert_eq!(server.requests_total(), 10);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn probes_follow_registry_state() {
    let missing = tempfile::tempdir().unwrap().path().join("nope");
    let server = inference::start(ServerConfig::ephemeral(&missing)).await.unwrap();
    let live = reqwest::get(http_url(&server, "/health/live")).await.unwrap();
    assert_eq!(live.status(), 200);
    let ready = reqwest::get(http_url(&server, "/health/ready")).await.unwrap();
    assert_eq!(ready.status(), 503);
    let body: serde_json::Value = serde_json::from_slice(&ready.bytes().await.unwrap()).unwrap();
    assert_eq!(body["live"], true);
    assert_eq!(body["ready"], false);
    assert!(!server.wait_ready(Duration::from_millis(200)).await);
    server.shutdown().await;

    let empty = tempfile::tempdir().unwrap();
    let server = inference::start(ServerConfig::ephemeral(empty.path())).await.unwrap();
    assert!(!server.wait_ready(Duration::from_millis(200)).await);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn metrics_count_requests_and_batches() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    let server = start_server(dir.path(), engine(16, 300.0, 1), false).await;

    let fresh = scrape(&server).await;
    assert_eq!(fresh[r#"inference_requests_total{model="sentiment",outcome="ok"}"#], 0.0);
    assert_eq!(fresh[r#"inference_queue_depth{model="sentiment"}"#], 0.0);
    assert_eq!(fresh[r#"inference_batches_total{model="sentiment"}"#], 0.0);

    let client = reqwest::Client::new();
    let url = http_url(&server, "/v1/infer");
    let calls: Vec<_> = (0..3)
        .map(|_| {
            let (client, url) = (client.clone(), url.clone());
            tokio::spawn(async move {
                post_json(&client, &url, r#"{"model":"sentiment","inputs":["good"]}"#).await
            })
        })
        .collect();
    for call in calls {
        assert_eq!(call.await.unwrap().0, 200);
    }
    let m = scrape(&server).await;
    assert_eq!(m[r#"inference_requests_total{model="sentiment",outcome="ok"}"#], 3.0);
    assert_eq!(m[r#"inference_batches_total{model="sentiment"}"#], 1.0);
    assert_eq!(m[r#"inference_batch_size_sum{model="sentiment"}"#], 3.0);
    assert_eq!(m[r#"inference_latency_ms_count{model="sentiment"}"#], 3.0);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn rpc_frames_match_http_and_reject_bad_frames() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    let server = start_server(dir.path(), engine(4, 1.0, 1), false).await;
    let client = reqwest::Client::new();
    let url = http_url(&server, "/v1/infer");
    let mut conn = TcpStream::connect(server.rpc_addr).await.unwrap();

    let body = r#"{"model":"sentiment","inputs":["good good bad","awful pain"]}"#;
    let over_rpc = rpc_call(&mut conn, body.as_bytes()).await;
    let (_, over_http) = post_json(&client, &url, body).await;
    assert_eq!(over_rpc.status, 0);
    assert_eq!(json!(over_rpc.outputs.unwrap()), over_http["outputs"]);
    assert_eq!(json!(over_rpc.model_version.unwrap()), over_http["model_version"]);

    // empty body: bad request, connection stays usable
    let empty = rpc_call(&mut conn, b"").await;
    assert_eq!(empty.status, 3);
    let missing = rpc_call(&mut conn, br#"{"model":"nope","inputs":["x"]}"#).await;
    assert_eq!(missing.status, 4);
    let bad = rpc_call(&mut conn, br#"{"model":"sentiment","inputs":[]}"#).await;
    assert_eq!(bad.status, 3);

    let mut conn = TcpStream::connect(server.rpc_addr).await.unwrap();
    conn.write_all(&2_000_000u32.to_be_bytes()).await.unwrap();
    let frame = read_frame(&mut conn).await.unwrap();
    let resp: RpcResponse = serde_json::from_slice(&frame).unwrap();
    assert_eq!(resp.status, 3);
    assert!(matches!(read_frame(&mut conn).await, Err(FrameError::Closed)));

    let mut conn = TcpStream::connect(server.rpc_addr).await.unwrap();
    conn.write_all(&[0, 0, 0, 50, b'{']).await.unwrap();
    conn.shutdown().await.unwrap();
    let frame = read_frame(&mut conn).await.unwrap();
    assert_eq!(serde_json::from_slice::<RpcResponse>(&frame).unwrap().status, 3);
    server.shutdown().await;
}

fn random_body(rng: &mut StdRng) -> serde_json::Value {
    let words = ["good", "great", "bad", "awful", "stable", "pain", "the", "Patient", "is", "GOOD!", "\u{2014}", "123"];
    let inputs: Vec<String> = (0..rng.random_range(1..4))
        .map(|_| {
            (0..rng.random_range(0..20))
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(if rng.random_bool(0.5) { " " } else { ", " })
        })
        .collect();
    let mut body = json!({"model": "sentiment", "inputs": inputs});
    if rng.random_bool(0.3) {
        body["version"] = json!(rng.random_range(1..=2));
    }
    body
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn protocols_agree_and_match_the_scoring_oracle() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    write_model(dir.path(), "sentiment", 2, 0.0, 0.0);
    let server = start_server(dir.path(), engine(8, 0.5, 1), false).await;
    let client = reqwest::Client::new();
    let url = http_url(&server, "/v1/infer");
    let mut conn = TcpStream::connect(server.rpc_addr).await.unwrap();
    let mut rng = StdRng::seed_from_u64(12);
    for _ in 0..100 {
        let body = random_body(&mut rng);
        let text = body.to_string();
        let (code, http) = post_json(&client, &url, &text).await;
        let rpc = rpc_call(&mut conn, text.as_bytes()).await;
        assert_eq!(code, 200);
        assert_eq!(rpc.status, 0);
        assert_eq!(json!(rpc.outputs.clone().unwrap()), http["outputs"]);
        assert_eq!(json!(rpc.model_version.unwrap()), http["model_version"]);
        let want_version = body.get("version").cloned().unwrap_or(json!(2));
        assert_eq!(http["model_version"], want_version);
        for (i, input) in body["inputs"].as_array().unwrap().iter().enumerate() {
            let (label, score) = lexicon_oracle(input.as_str().unwrap());
            assert_eq!(http["outputs"][i]["label"], label, "{input}");
            assert!((http["outputs"][i]["score"].as_f64().unwrap() - score).abs() < 1e-12);
        }
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn admin_reload_swaps_versions_and_keeps_serving_on_failure() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("models");
    write_model(&root, "sentiment", 1, 0.0, 0.0);
    write_model(&root, "sentiment", 2, 0.0, 0.0);
    let server = start_server(&root, engine(4, 1.0, 1), true).await;
    let client = reqwest::Client::new();
    let reload_url = http_url(&server, "/v1/admin/reload");
    let infer_url = http_url(&server, "/v1/infer");
    let body = r#"{"model":"sentiment","inputs":["good"]}"#;

    write_model(&root, "sentiment", 3, 0.0, 0.0);
    let (code, report) = post_json(&client, &reload_url, "").await;
    assert_eq!(code, 200);
    assert_eq!(report["old"], json!({"sentiment": 2}));
    assert_eq!(report["new"], json!({"sentiment": 3}));
    assert_eq!(post_json(&client, &infer_url, body).await.1["model_version"], 3);

    // unchanged disk: same latest map
    let (_, again) = post_json(&client, &reload_url, "").await;
    assert_eq!(again["old"], again["new"]);

    let moved = dir.path().join("moved");
    std::fs::rename(&root, &moved).unwrap();
    let (code, err) = post_json(&client, &reload_url, "").await;
    assert_eq!(code, 500);
    assert!(err["error"].is_string());
    assert_eq!(post_json(&client, &infer_url, body).await.1["model_version"], 3);
    assert!(server.health().ready);

    std::fs::create_dir_all(&root).unwrap();
    let (code, report) = post_json(&client, &reload_url, "").await;
    assert_eq!(code, 200);
    assert_eq!(report["new"], json!({}));
    let health = server.health();
    assert!(health.live && !health.ready);
    assert_eq!(health.models_ready["sentiment"], false);
    assert_eq!(post_json(&client, &infer_url, body).await.0, 404);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn admin_endpoint_is_off_by_default() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    let server = start_server(dir.path(), engine(4, 1.0, 1), false).await;
    let (code, _) = post_json(&reqwest::Client::new(), &http_url(&server, "/v1/admin/reload"), "").await;
    assert_eq!(code, 404);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reload_under_load_has_no_errors() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    write_model(dir.path(), "sentiment", 2, 1.0, 0.1);
    let server = start_server(dir.path(), engine(16, 2.0, 2), false).await;
    let url = http_url(&server, "/v1/infer");
    let stop = Arc::new(AtomicBool::new(false));
    let errors = Arc::new(AtomicU64::new(0));
    let mut users = Vec::new();
    for _ in 0..10 {
        let (url, stop, errors) = (url.clone(), stop.clone(), errors.clone());
        users.push(tokio::spawn(async move {
            let client = reqwest::Client::new();
            let mut seen = Vec::new();
            while !stop.load(Ordering::Relaxed) {
                let (code, body) = post_json(&client, &url, r#"{"model":"sentiment","inputs":["good"]}"#).await;
                if code == 200 {
                    seen.push(body["model_version"].as_u64().unwrap());
                } else {
                    errors.fetch_add(1, Ordering::Relaxed);
                }
            }
            seen
        }));
    }
    tokio::time::sleep(Duration::from_millis(300)).await;
    write_model(dir.path(), "sentiment", 3, 1.0, 0.1);
    let report = server.reload().await.unwrap();
    assert_eq!(report.new["sentiment"], 3);
    let swapped = Instant::now();
    tokio::time::sleep(Duration::from_millis(300)).await;
    stop.store(true, Ordering::Relaxed);
    assert!(swapped.elapsed() >= Duration::from_millis(300));
    for u in users {
        let seen = u.await.unwrap();
        assert!(seen.windows(2).all(|w| w[0] <= w[1]), "non-monotone versions");
        assert_eq!(*seen.last().unwrap(), 3);
    }
    assert_eq!(errors.load(Ordering::Relaxed), 0);
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn queue_wait_respects_the_window() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 0.0, 0.0);
    let server = start_server(dir.path(), engine(16, 5.0, 1), false).await;
    let client = reqwest::Client::new();
    let url = http_url(&server, "/v1/infer");
    for _ in 0..30 {
        let (_, body) = post_json(&client, &url, r#"{"model":"sentiment","inputs":["good"]}"#).await;
        let wait = body["server_timing_ms"]["queue_wait"].as_f64().unwrap();
        assert!((5.0..=5.0 + 1.0 + 4.0).contains(&wait), "queue_wait {wait}");
    }
    server.shutdown().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn overload_maps_to_unavailable() {
    let dir = tempfile::tempdir().unwrap();
    write_model(dir.path(), "sentiment", 1, 30.0, 0.0);
    let mut cfg = ServerConfig::ephemeral(dir.path());
    cfg.engine.policy = clinserve_core::BatchPolicy::new(1, 0.0, 1).unwrap();
    let server = inference::start(cfg).await.unwrap();
    assert!(server.wait_ready(Duration::from_secs(5)).await);
    let inputs: Vec<String> = (0..8).map(|i| format!("good {i}")).collect();
    let body = json!({"model":"sentiment","inputs":inputs}).to_string();
    let (code, _) = post_json(&reqwest::Client::new(), &http_url(&server, "/v1/infer"), &body).await;
    assert_eq!(code, 503);
    let m = scrape(&server).await;
    assert_eq!(m[r#"inference_requests_total{model="sentiment",outcome="overload"}"#], 1.0);

    let mut conn = TcpStream::connect(server.rpc_addr).await.unwrap();
    write_frame(&mut conn, body.as_bytes()).await.unwrap();
    let resp: RpcResponse = serde_json::from_slice(&read_frame(&mut conn).await.unwrap()).unwrap();
    assert_eq!(resp.status, 14);
    server.shutdown().await;
}
