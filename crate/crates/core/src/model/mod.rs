//! Deterministic stand-in models and their versioned on-disk registry.
//!
//! A model scores normalized tokens against a polarity lexicon and then
//! holds the executing thread for `base_ms + b * per_item_ms`, so a batch of
//! `b` items costs what the configured [`CostModel`] says it costs.

mod lexicon;
mod registry;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use lexicon::{Lexicon, LexiconError};
pub use registry::{
    LoadOptions, ModelRegistry, RegistryError, RegistryWarning, SharedRegistry, CONFIG_FILE,
};

use crate::phi::NormalizedInput;

/// Sequence limit used when a model config does not set one.
pub const DEFAULT_MAX_SEQ_LEN: usize = 128;

/// Per-batch service time: a fixed cost plus a marginal per-item cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub base_ms: f64,
    pub per_item_ms: f64,
}

impl CostModel {
    /// Large fixed cost, cheap marginal items: batching pays off.
    pub const GPU_LIKE: CostModel = CostModel { base_ms: 25.0, per_item_ms: 0.5 };
    /// Small fixed cost, expensive items: batching buys little.
    pub const CPU_LIKE: CostModel = CostModel { base_ms: 2.0, per_item_ms: 18.0 };
    pub const FREE: CostModel = CostModel { base_ms: 0.0, per_item_ms: 0.0 };

    pub fn new(base_ms: f64, per_item_ms: f64) -> Result<Self, String> {
        for (name, v) in [("base_ms", base_ms), ("per_item_ms", per_item_ms)] {
            if !v.is_finite() || v < 0.0 {
                return Err(format!("{name} must be a nonnegative number, got {v}"));
            }
        }
        Ok(Self { base_ms, per_item_ms })
    }

    pub fn service_ms(&self, batch_size: usize) -> f64 {
        self.base_ms + batch_size as f64 * self.per_item_ms
    }

    pub fn service_time(&self, batch_size: usize) -> Duration {
        Duration::from_secs_f64(self.service_ms(batch_size) / 1000.0)
    }
}

/// Named calibration profiles, selectable from server config.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CostProfile {
    #[serde(rename = "gpu-like")]
    GpuLike,
    #[serde(rename = "cpu-like")]
    CpuLike,
}

impl CostProfile {
    pub fn cost(self) -> CostModel {
        match self {
            CostProfile::GpuLike => CostModel::GPU_LIKE,
            CostProfile::CpuLike => CostModel::CPU_LIKE,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CostProfile::GpuLike => "gpu-like",
            CostProfile::CpuLike => "cpu-like",
        }
    }
}

impl FromStr for CostProfile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gpu-like" => Ok(CostProfile::GpuLike),
            "cpu-like" => Ok(CostProfile::CpuLike),
            other => Err(format!("unknown cost profile `{other}`")),
        }
    }
}

impl fmt::Display for CostProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "lexicon")]
    Lexicon,
    /// No lexicon: every input scores neutral. Useful for pure serving tests.
    #[serde(rename = "synthetic-echo")]
    SyntheticEcho,
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lexicon" => Ok(ModelKind::Lexicon),
            "synthetic-echo" => Ok(ModelKind::SyntheticEcho),
            other => Err(format!("unknown model kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelDescriptor {
    pub name: String,
    pub version: u32,
    pub kind: ModelKind,
    pub cost: CostModel,
    pub lexicon_path: Option<PathBuf>,
    pub max_seq_len: usize,
    pub lexicon: Arc<Lexicon>,
}

impl ModelDescriptor {
    /// An in-memory model, mostly for tests and embedding.
    pub fn in_memory(name: &str, version: u32, lexicon: Lexicon, cost: CostModel) -> Self {
        Self {
            name: name.to_string(),
            version,
            kind: ModelKind::Lexicon,
            cost,
            lexicon_path: None,
            max_seq_len: DEFAULT_MAX_SEQ_LEN,
            lexicon: Arc::new(lexicon),
        }
    }

    /// Scores one input without any injected delay.
    pub fn score(&self, input: &NormalizedInput) -> SentimentOutput {
        let sum: i64 = match self.kind {
            ModelKind::Lexicon => input
                .tokens()
                .iter()
                .filter_map(|t| self.lexicon.polarity(t))
                .map(i64::from)
                .sum(),
            ModelKind::SyntheticEcho => 0,
        };
        let label = match sum.signum() {
            1 => Label::Positive,
            -1 => Label::Negative,
            _ => Label::Neutral,
        };
        let score = (sum.unsigned_abs() as f64 / input.len().max(1) as f64).clamp(0.0, 1.0);
        SentimentOutput {
            label,
            score,
            model_version: self.version,
        }
    }
}

/// Checks a model name against `[a-z0-9_-]+`.
pub fn valid_model_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentOutput {
    pub label: Label,
    pub score: f64,
    pub model_version: u32,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum InferError {
    #[error("infer_batch called with an empty batch")]
    EmptyBatch,
    #[error("input {index} has {len} tokens, model limit is {max}")]
    SequenceTooLong { index: usize, len: usize, max: usize },
}

/// Runs one batched execution: scores every input in order, then holds the
/// calling thread for the model's service time at this batch size.
pub fn infer_batch(
    model: &ModelDescriptor,
    inputs: &[NormalizedInput],
) -> Result<Vec<SentimentOutput>, InferError> {
    if inputs.is_empty() {
        return Err(InferError::EmptyBatch);
    }
    if let Some((index, input)) = inputs
        .iter()
        .enumerate()
        .find(|(_, i)| i.len() > model.max_seq_len)
    {
        return Err(InferError::SequenceTooLong {
            index,
            len: input.len(),
            max: model.max_seq_len,
        });
    }
    let outputs = inputs.iter().map(|i| model.score(i)).collect();
    let delay = model.cost.service_time(inputs.len());
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }
    Ok(outputs)
}
