#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::time::Duration;

use clinserve_core::batching::{BatchPolicy, EngineConfig};
use clinserve_core::wire::{read_frame, write_frame, RpcResponse};
use clinserve_server::{inference, ServerConfig, ServerHandle};
use tokio::net::TcpStream;

pub const LEXICON: &str = "good\t1\ngreat\t2\nbad\t-1\nawful\t-2\nstable\t1\npain\t-1\n";

pub fn write_model(root: &Path, name: &str, version: u32, base_ms: f64, per_item_ms: f64) {
    let dir = root.join(name).join(version.to_string());
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join("lexicon.tsv"), LEXICON).unwrap();
    fs::write(
        dir.join("model.config"),
        format!(
            "kind=lexicon\nbase_ms={base_ms}\nper_item_ms={per_item_ms}\nmax_seq_len=128\nlexicon=lexicon.tsv\n"
        ),
    )
    .unwrap();
}

pub fn engine(max_batch: usize, window_ms: f64, executors: usize) -> EngineConfig {
    EngineConfig {
        policy: BatchPolicy::new(max_batch, window_ms, 1024).unwrap(),
        executors,
    }
}

pub async fn start_server(root: &Path, engine: EngineConfig, admin: bool) -> ServerHandle {
    let mut cfg = ServerConfig::ephemeral(root);
    cfg.engine = engine;
    cfg.admin_enabled = admin;
    let server = inference::start(cfg).await.unwrap();
    assert!(server.wait_ready(Duration::from_secs(5)).await, "server never became ready");
    server
}

pub fn http_url(server: &ServerHandle, path: &str) -> String {
    format!("http://{}{}", server.http_addr, path)
}

pub async fn post_json(client: &reqwest::Client, url: &str, body: &str) -> (u16, serde_json::Value) {
    let resp = client
        .post(url)
        .header("content-type", "application/json")
        .body(body.to_string())
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    let bytes = resp.bytes().await.unwrap();
    (status, serde_json::from_slice(&bytes).unwrap_or(serde_json::Value::Null))
}

pub async fn rpc_call(stream: &mut TcpStream, body: &[u8]) -> RpcResponse {
    write_frame(stream, body).await.unwrap();
    let frame = read_frame(stream).await.unwrap();
    serde_json::from_slice(&frame).unwrap()
}

pub async fn scrape(server: &ServerHandle) -> std::collections::BTreeMap<String, f64> {
    let text = reqwest::get(format!("http://{}/metrics", server.metrics_addr))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    clinserve_server::metrics::parse_exposition(&text)
}
