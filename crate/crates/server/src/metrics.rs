//! Request counters and the plain-text exposition served on the metrics port.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::sync::Mutex;
use std::time::Duration;

use clinserve_core::batching::EngineStats;
use clinserve_core::wire::Status;

/// Model label used for bodies that never named a usable model.
pub const UNATTRIBUTED: &str = "_invalid";

const OUTCOMES: [Status; 5] = [
    Status::Ok,
    Status::NotFound,
    Status::Unavailable,
    Status::BadRequest,
    Status::Internal,
];

#[derive(Debug, Default, Clone, Copy)]
struct ModelCounters {
    by_outcome: [u64; 5],
    latency_ms_sum: f64,
    latency_count: u64,
}

#[derive(Debug, Default)]
pub struct RequestMetrics {
    models: Mutex<BTreeMap<String, ModelCounters>>,
}

fn outcome_index(status: Status) -> usize {
    OUTCOMES.iter().position(|s| *s == status).expect("status in table")
}

impl RequestMetrics {
    pub fn record(&self, model: &str, status: Status, latency: Duration) {
        let mut models = self.models.lock().unwrap_or_else(|p| p.into_inner());
        let c = models.entry(model.to_string()).or_default();
        c.by_outcome[outcome_index(status)] += 1;
        c.latency_ms_sum += latency.as_secs_f64() * 1000.0;
        c.latency_count += 1;
    }

    pub fn requests(&self, model: &str, status: Status) -> u64 {
        let models = self.models.lock().unwrap_or_else(|p| p.into_inner());
        models
            .get(model)
            .map_or(0, |c| c.by_outcome[outcome_index(status)])
    }

    pub fn total_requests(&self) -> u64 {
        let models = self.models.lock().unwrap_or_else(|p| p.into_inner());
        models.values().flat_map(|c| c.by_outcome).sum()
    }

    /// Renders every metric for `known` models plus any model seen so far.
    /// `engines` holds summed engine stats per model name.
    pub fn render<'a>(
        &self,
        known: impl IntoIterator<Item = &'a str>,
        engines: &'a BTreeMap<String, EngineStats>,
    ) -> String {
        let mut rows = self
            .models
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .clone();
        for name in known.into_iter().chain(engines.keys().map(String::as_str)) {
            rows.entry(name.to_string()).or_default();
        }
        let mut out = String::new();
        for (model, c) in &rows {
            let m = escape(model);
            for (i, status) in OUTCOMES.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "inference_requests_total{{model=\"{m}\",outcome=\"{}\"}} {}",
                    status.outcome(),
                    c.by_outcome[i]
                );
            }
            let e = engines.get(model).copied().unwrap_or_default();
            let _ = writeln!(out, "inference_batches_total{{model=\"{m}\"}} {}", e.batches);
            let _ = writeln!(out, "inference_batch_size_sum{{model=\"{m}\"}} {}", e.batch_size_sum);
            let _ = writeln!(out, "inference_queue_depth{{model=\"{m}\"}} {}", e.queue_depth);
            let _ = writeln!(out, "inference_latency_ms_sum{{model=\"{m}\"}} {}", c.latency_ms_sum);
            let _ = writeln!(out, "inference_latency_ms_count{{model=\"{m}\"}} {}", c.latency_count);
        }
        out
    }
}

fn escape(value: &str) -> String {
    value
        .replace('\\', "\\\\")
        .replace('"', "\\\"")
        .replace('\n', "\\n")
}

/// Parses one `name{labels} value` exposition document into a lookup table
/// keyed by the full `name{labels}` string.
pub fn parse_exposition(text: &str) -> BTreeMap<String, f64> {
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| {
            let (key, value) = l.rsplit_once(' ')?;
            Some((key.to_string(), value.parse().ok()?))
        })
        .collect()
}
