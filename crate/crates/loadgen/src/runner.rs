//! Closed-loop virtual users: send, await, record, repeat with zero think
//! time until the run ends.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use clinserve_core::wire::{read_frame, write_frame, RpcResponse, Status};
use serde::{Deserialize, Serialize};
use tokio::io::BufReader;
use tokio::net::TcpStream;

use crate::percentile::p50_p95;
use crate::profile::{LoadProfile, Protocol};
use crate::LoadgenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    BadRequest,
    Unauthorized,
    Forbidden,
    NotFound,
    Overload,
    Upstream,
    Timeout,
    Internal,
    NotImplemented,
    ConnectionError,
}

impl Outcome {
    pub fn from_http(code: u16) -> Self {
        match code {
            200..=299 => Outcome::Ok,
            400 | 413 => Outcome::BadRequest,
            401 => Outcome::Unauthorized,
            403 => Outcome::Forbidden,
            404 => Outcome::NotFound,
            501 => Outcome::NotImplemented,
            502 => Outcome::Upstream,
            503 => Outcome::Overload,
            504 => Outcome::Timeout,
            _ => Outcome::Internal,
        }
    }

    pub fn from_rpc(code: u32) -> Self {
        match Status::from_rpc_code(code) {
            Some(Status::Ok) => Outcome::Ok,
            Some(Status::BadRequest) => Outcome::BadRequest,
            Some(Status::NotFound) => Outcome::NotFound,
            Some(Status::Unavailable) => Outcome::Overload,
            Some(Status::Internal) | None => Outcome::Internal,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Ok => "ok",
            Outcome::BadRequest => "bad_request",
            Outcome::Unauthorized => "unauthorized",
            Outcome::Forbidden => "forbidden",
            Outcome::NotFound => "not_found",
            Outcome::Overload => "overload",
            Outcome::Upstream => "upstream",
            Outcome::Timeout => "timeout",
            Outcome::Internal => "internal",
            Outcome::NotImplemented => "not_implemented",
            Outcome::ConnectionError => "connection_error",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencySample {
    /// Send time relative to the run start.
    pub send_ms: f64,
    pub latency_ms: f64,
    pub outcome: Outcome,
    pub model_version: Option<u32>,
}

impl LatencySample {
    pub fn done_ms(&self) -> f64 {
        self.send_ms + self.latency_ms
    }
}

/// Raw per-user samples of one run, in send order.
#[derive(Debug, Clone, Default)]
pub struct RunSamples {
    pub per_user: Vec<Vec<LatencySample>>,
    pub mean_batch_size: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileEcho {
    pub virtual_users: usize,
    pub duration_s: f64,
    pub warmup_s: f64,
    pub target: String,
    pub protocol: Protocol,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub profile: ProfileEcho,
    /// `None` when no request succeeded after warmup.
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
    pub throughput_rps: f64,
    pub outcome_counts: BTreeMap<Outcome, u64>,
    pub mean_batch_size: Option<f64>,
    /// Post-warmup ok latencies, for histograms.
    #[serde(skip)]
    pub latencies_ms: Vec<f64>,
}

impl RunReport {
    pub fn count(&self, outcome: Outcome) -> u64 {
        self.outcome_counts.get(&outcome).copied().unwrap_or(0)
    }

    pub fn non_ok(&self) -> u64 {
        self.outcome_counts
            .iter()
            .filter(|(o, _)| **o != Outcome::Ok)
            .map(|(_, n)| n)
            .sum()
    }
}

/// Reduces raw samples to a report. A sample counts when it was sent at or
/// after the warmup boundary and completed by the end of the run.
pub fn summarize(profile: &LoadProfile, samples: &RunSamples) -> RunReport {
    let warmup_ms = profile.warmup.as_secs_f64() * 1000.0;
    let end_ms = profile.duration.as_secs_f64() * 1000.0;
    let mut outcome_counts = BTreeMap::new();
    let mut latencies = Vec::new();
    for s in samples.per_user.iter().flatten() {
        if s.send_ms < warmup_ms || s.done_ms() > end_ms {
            continue;
        }
        *outcome_counts.entry(s.outcome).or_insert(0) += 1;
        if s.outcome == Outcome::Ok {
            latencies.push(s.latency_ms);
        }
    }
    let measured_s = (end_ms - warmup_ms) / 1000.0;
    let pcts = p50_p95(&latencies);
    let report = RunReport {
        profile: ProfileEcho {
            virtual_users: profile.virtual_users,
            duration_s: profile.duration.as_secs_f64(),
            warmup_s: profile.warmup.as_secs_f64(),
            target: profile.target.clone(),
            protocol: profile.protocol,
        },
        p50_ms: pcts.map(|p| p.0),
        p95_ms: pcts.map(|p| p.1),
        throughput_rps: latencies.len() as f64 / measured_s,
        outcome_counts,
        mean_batch_size: samples.mean_batch_size,
        latencies_ms: latencies,
    };
    if let (Some(p50), Some(p95)) = (report.p50_ms, report.p95_ms) {
        assert!(p50 <= p95, "p50 {p50} exceeds p95 {p95}");
    }
    report
}

/// Waits for the readiness probe (HTTP 200, or a TCP connect for RPC
/// targets without a probe URL).
pub async fn wait_ready(profile: &LoadProfile) -> Result<(), LoadgenError> {
    let deadline = Instant::now() + profile.ready_timeout;
    let probe_url = profile.default_ready_url();
    let client = reqwest::Client::new();
    loop {
        let ready = match &probe_url {
            Some(url) => matches!(
                tokio::time::timeout(Duration::from_secs(2), client.get(url).send()).await,
                Ok(Ok(r)) if r.status().is_success()
            ),
            None => TcpStream::connect(profile.rpc_authority()).await.is_ok(),
        };
        if ready {
            return Ok(());
        }
        if Instant::now() >= deadline {
            return Err(LoadgenError::NotReady {
                target: probe_url.unwrap_or_else(|| profile.target.clone()),
                waited: profile.ready_timeout,
            });
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
}

enum Conn {
    Http(reqwest::Client),
    Rpc(Option<BufReader<TcpStream>>),
}

impl Conn {
    fn new(profile: &LoadProfile) -> Result<Self, LoadgenError> {
        Ok(match profile.protocol {
            Protocol::Http => Conn::Http(
                reqwest::Client::builder()
                    .pool_max_idle_per_host(1)
                    .tcp_nodelay(true)
                    .timeout(profile.request_timeout)
                    .build()
                    .map_err(|e| LoadgenError::Client(e.to_string()))?,
            ),
            Protocol::Rpc => Conn::Rpc(None),
        })
    }

    async fn send(&mut self, profile: &LoadProfile, body: &str) -> (Outcome, Option<u32>) {
        match self {
            Conn::Http(client) => {
                let mut req = client
                    .post(&profile.target)
                    .header("content-type", "application/json")
                    .body(body.to_string());
                if let Some(t) = &profile.token {
                    req = req.header("authorization", format!("Bearer {t}"));
                }
                let resp = match req.send().await {
                    Ok(r) => r,
                    Err(e) if e.is_timeout() => return (Outcome::Timeout, None),
                    Err(_) => return (Outcome::ConnectionError, None),
                };
                let outcome = Outcome::from_http(resp.status().as_u16());
                let bytes = match resp.bytes().await {
                    Ok(b) => b,
                    Err(_) => return (Outcome::ConnectionError, None),
                };
                let version = if outcome == Outcome::Ok {
                    serde_json::from_slice::<serde_json::Value>(&bytes)
                        .ok()
                        .and_then(|v| v.get("model_version")?.as_u64())
                        .map(|v| v as u32)
                } else {
                    None
                };
                (outcome, version)
            }
            Conn::Rpc(slot) => {
                if slot.is_none() {
                    match TcpStream::connect(profile.rpc_authority()).await {
                        Ok(s) => {
                            let _ = s.set_nodelay(true);
                            *slot = Some(BufReader::new(s));
                        }
                        Err(_) => return (Outcome::ConnectionError, None),
                    }
                }
                let stream = slot.as_mut().expect("connected above");
                let exchange = async {
                    write_frame(stream, body.as_bytes()).await.ok()?;
                    read_frame(stream).await.ok()
                };
                let frame = match tokio::time::timeout(profile.request_timeout, exchange).await {
                    Ok(Some(f)) => f,
                    Ok(None) => {
                        *slot = None;
                        return (Outcome::ConnectionError, None);
                    }
                    Err(_) => {
                        *slot = None;
                        return (Outcome::Timeout, None);
                    }
                };
                match serde_json::from_slice::<RpcResponse>(&frame) {
                    Ok(r) => (Outcome::from_rpc(r.status), r.model_version),
                    Err(_) => (Outcome::Internal, None),
                }
            }
        }
    }
}

async fn virtual_user(
    profile: LoadProfile,
    user: usize,
    start: Instant,
) -> Result<Vec<LatencySample>, LoadgenError> {
    let mut conn = Conn::new(&profile)?;
    let mut samples = Vec::new();
    let corpus = &profile.corpus;
    let mut next = user % corpus.len();
    loop {
        let sent = Instant::now();
        if sent.duration_since(start) >= profile.duration {
            return Ok(samples);
        }
        let (outcome, model_version) = conn.send(&profile, &corpus[next]).await;
        let done = Instant::now();
        samples.push(LatencySample {
            send_ms: sent.duration_since(start).as_secs_f64() * 1000.0,
            latency_ms: done.duration_since(sent).as_secs_f64() * 1000.0,
            outcome,
            model_version,
        });
        next = (next + 1) % corpus.len();
        if outcome == Outcome::ConnectionError {
            // keep a dead target from turning the loop into a spin
            tokio::time::sleep(Duration::from_millis(1)).await;
        }
    }
}

async fn scrape_batches(url: &str) -> Option<(f64, f64)> {
    let text = reqwest::get(url).await.ok()?.text().await.ok()?;
    let mut batches = 0.0;
    let mut sum = 0.0;
    for line in text.lines() {
        let Some((key, value)) = line.rsplit_once(' ') else { continue };
        let Ok(v) = value.parse::<f64>() else { continue };
        if key.starts_with("inference_batches_total{") {
            batches += v;
        } else if key.starts_with("inference_batch_size_sum{") {
            sum += v;
        }
    }
    Some((batches, sum))
}

/// Runs the profile and returns raw per-user samples.
pub async fn run_closed_loop_samples(profile: &LoadProfile) -> Result<RunSamples, LoadgenError> {
    profile.validate()?;
    wait_ready(profile).await?;
    let start = Instant::now();
    let users: Vec<_> = (0..profile.virtual_users)
        .map(|u| tokio::spawn(virtual_user(profile.clone(), u, start)))
        .collect();

    let mut mean_batch_size = None;
    if let Some(url) = &profile.metrics_url {
        tokio::time::sleep_until((start + profile.warmup).into()).await;
        let before = scrape_batches(url).await;
        tokio::time::sleep_until((start + profile.duration).into()).await;
        let after = scrape_batches(url).await;
        if let (Some((b0, s0)), Some((b1, s1))) = (before, after) {
            if b1 > b0 {
                mean_batch_size = Some((s1 - s0) / (b1 - b0));
            }
        }
    }

    let mut per_user = Vec::with_capacity(users.len());
    for u in users {
        per_user.push(u.await.map_err(|e| LoadgenError::Client(e.to_string()))??);
    }
    Ok(RunSamples { per_user, mean_batch_size })
}

pub async fn run_closed_loop(profile: &LoadProfile) -> Result<RunReport, LoadgenError> {
    let samples = run_closed_loop_samples(profile).await?;
    Ok(summarize(profile, &samples))
}
