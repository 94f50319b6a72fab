use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::LoadgenError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Http,
    Rpc,
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(Protocol::Http),
            "rpc" => Ok(Protocol::Rpc),
            other => Err(format!("unknown protocol `{other}` (expected http or rpc)")),
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Http => "http",
            Protocol::Rpc => "rpc",
        })
    }
}

/// One closed-loop experiment.
///
/// For HTTP the target is the full endpoint URL the corpus bodies are
/// posted to; for RPC it is `host:port` (an `rpc://` prefix is accepted).
#[derive(Debug, Clone)]
pub struct LoadProfile {
    pub virtual_users: usize,
    pub duration: Duration,
    pub warmup: Duration,
    pub target: String,
    pub protocol: Protocol,
    pub corpus: Vec<String>,
    pub token: Option<String>,
    /// Readiness probe; defaults to `/health/ready` on the target's
    /// authority for HTTP and a plain TCP connect for RPC.
    pub ready_url: Option<String>,
    pub ready_timeout: Duration,
    /// Metrics endpoint scraped for the mean batch size.
    pub metrics_url: Option<String>,
    pub request_timeout: Duration,
}

impl LoadProfile {
    pub fn new(target: impl Into<String>, protocol: Protocol, corpus: Vec<String>) -> Self {
        Self {
            virtual_users: 10,
            duration: Duration::from_secs(60),
            warmup: Duration::from_secs(5),
            target: target.into(),
            protocol,
            corpus,
            token: None,
            ready_url: None,
            ready_timeout: Duration::from_secs(30),
            metrics_url: None,
            request_timeout: Duration::from_secs(30),
        }
    }

    pub fn validate(&self) -> Result<(), LoadgenError> {
        let bad = |m: String| Err(LoadgenError::Profile(m));
        if self.virtual_users == 0 {
            return bad("virtual_users must be at least 1".into());
        }
        if self.duration.is_zero() {
            return bad("duration must be positive".into());
        }
        if self.warmup >= self.duration {
            return bad(format!(
                "warmup ({:?}) must be shorter than duration ({:?})",
                self.warmup, self.duration
            ));
        }
        if self.corpus.is_empty() {
            return bad("corpus must contain at least one request body".into());
        }
        Ok(())
    }

    /// `host:port` for RPC targets.
    pub fn rpc_authority(&self) -> &str {
        self.target.strip_prefix("rpc://").unwrap_or(&self.target)
    }

    pub fn default_ready_url(&self) -> Option<String> {
        if let Some(u) = &self.ready_url {
            return Some(u.clone());
        }
        match self.protocol {
            Protocol::Rpc => None,
            Protocol::Http => {
                let (scheme, rest) = self.target.split_once("://")?;
                let authority = rest.split('/').next()?;
                Some(format!("{scheme}://{authority}/health/ready"))
            }
        }
    }
}

/// One JSON request body per nonblank line.
pub fn parse_corpus(text: &str) -> Result<Vec<String>, LoadgenError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        serde_json::from_str::<serde_json::Value>(line)
            .map_err(|e| LoadgenError::Profile(format!("corpus line {}: {e}", i + 1)))?;
        out.push(line.to_string());
    }
    if out.is_empty() {
        return Err(LoadgenError::Profile("corpus is empty".into()));
    }
    Ok(out)
}

pub fn read_corpus(path: &Path) -> Result<Vec<String>, LoadgenError> {
    let text = std::fs::read_to_string(path).map_err(|e| LoadgenError::io(path, e))?;
    parse_corpus(&text)
}

/// Built-in corpus of clinical-note style sentiment requests.
pub fn default_corpus(model: &str) -> Vec<String> {
    const NOTES: &[&str] = &[
        "Patient reports feeling good today, pain is improving.",
        "Recovery is stable and the wound looks great.",
        "Severe pain overnight, patient feels awful.",
        "No change since the last visit.",
        "Family is happy with the progress, mood is good.",
        "Worse breathing this morning, oxygen saturation is poor.",
        "Tolerating diet well, ambulating without help.",
        "Anxious about the procedure but otherwise fine.",
    ];
    NOTES
        .iter()
        .map(|n| serde_json::json!({ "model": model, "inputs": [n] }).to_string())
        .collect()
}
