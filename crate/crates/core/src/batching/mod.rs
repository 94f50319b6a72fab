//! Dynamic batching: a bounded FIFO queue, a (size, window) batch former and
//! a scheduler that feeds formed batches to a pool of executors.

mod engine;
mod queue;
mod sim;

use std::time::Duration;

pub use engine::{
    BatchExecutor, Completed, Completion, Engine, EngineStats, PendingRequest, Ticket,
};
pub use queue::{Batch, BatchQueue, Queued, Rejected};
pub use sim::{simulate_dispatch, DispatchRecord, DispatchTrace};

use crate::config::{ConfigError, FlatConfig};

/// Config keys understood by [`EngineConfig::from_flat`].
pub const ENGINE_CONFIG_KEYS: &[&str] = &[
    "batch.max_size",
    "batch.max_delay_ms",
    "batch.max_queue",
    "executors.count",
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchPolicy {
    pub max_batch_size: usize,
    pub max_queue_delay: Duration,
    pub max_queue_len: usize,
}

impl Default for BatchPolicy {
    fn default() -> Self {
        Self {
            max_batch_size: 16,
            max_queue_delay: Duration::from_millis(5),
            max_queue_len: 1024,
        }
    }
}

impl BatchPolicy {
    pub fn new(
        max_batch_size: usize,
        max_queue_delay_ms: f64,
        max_queue_len: usize,
    ) -> Result<Self, String> {
        if max_batch_size == 0 {
            return Err("max_batch_size must be at least 1".into());
        }
        if !max_queue_delay_ms.is_finite() || max_queue_delay_ms < 0.0 {
            return Err(format!("max_queue_delay_ms must be nonnegative, got {max_queue_delay_ms}"));
        }
        if max_queue_len < max_batch_size {
            return Err(format!(
                "max_queue_len ({max_queue_len}) must be >= max_batch_size ({max_batch_size})"
            ));
        }
        Ok(Self {
            max_batch_size,
            max_queue_delay: Duration::from_secs_f64(max_queue_delay_ms / 1000.0),
            max_queue_len,
        })
    }

    /// `B=1, W=0`: every request dispatches as soon as an executor is free.
    pub fn pass_through(max_queue_len: usize) -> Self {
        Self {
            max_batch_size: 1,
            max_queue_delay: Duration::ZERO,
            max_queue_len: max_queue_len.max(1),
        }
    }

    pub fn max_queue_delay_ms(&self) -> f64 {
        self.max_queue_delay.as_secs_f64() * 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub policy: BatchPolicy,
    pub executors: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            policy: BatchPolicy::default(),
            executors: 1,
        }
    }
}

impl EngineConfig {
    /// Reads the `batch.*` and `executors.count` keys, defaulting the rest.
    pub fn from_flat(cfg: &FlatConfig) -> Result<Self, ConfigError> {
        let defaults = Self::default();
        let size = cfg
            .parse_opt::<usize>("batch.max_size")?
            .unwrap_or(defaults.policy.max_batch_size);
        let delay = cfg
            .parse_opt::<f64>("batch.max_delay_ms")?
            .unwrap_or(defaults.policy.max_queue_delay_ms());
        let queue = cfg
            .parse_opt::<usize>("batch.max_queue")?
            .unwrap_or(defaults.policy.max_queue_len);
        let executors = cfg
            .parse_opt::<usize>("executors.count")?
            .unwrap_or(defaults.executors);
        let policy = BatchPolicy::new(size, delay, queue).map_err(|reason| ConfigError::Invalid {
            key: "batch.*".into(),
            reason,
        })?;
        if executors == 0 {
            return Err(ConfigError::Invalid {
                key: "executors.count".into(),
                reason: "must be at least 1".into(),
            });
        }
        Ok(Self { policy, executors })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("queue full")]
    Overload,
    #[error("engine shut down")]
    Shutdown,
    #[error("executor failed: {0}")]
    Internal(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn policy_validation() {
        assert!(BatchPolicy::new(0, 5.0, 10).is_err());
        assert!(BatchPolicy::new(16, -1.0, 1024).is_err());
        assert!(BatchPolicy::new(16, 5.0, 8).is_err());
        let p = BatchPolicy::new(16, 5.0, 1024).unwrap();
        assert_eq!(p, BatchPolicy::default());
    }

    #[test]
    fn engine_config_from_flat() {
        let cfg = FlatConfig::parse(
            "batch.max_size=1\nbatch.max_delay_ms=0\nbatch.max_queue=64\nexecutors.count=4\n",
        )
        .unwrap();
        let ec = EngineConfig::from_flat(&cfg).unwrap();
        assert_eq!(ec.policy, BatchPolicy::pass_through(64));
        assert_eq!(ec.executors, 4);
        assert_eq!(
            EngineConfig::from_flat(&FlatConfig::default()).unwrap(),
            EngineConfig::default()
        );
        let bad = FlatConfig::parse("executors.count=0").unwrap();
        assert!(EngineConfig::from_flat(&bad).is_err());
    }
}
