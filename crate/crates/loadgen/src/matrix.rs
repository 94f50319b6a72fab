//! The batch-size comparison: each cell is a server launch configuration,
//! crossed with every user level. A fresh in-process server is started for
//! every (cell, users) pair.

use std::path::{Path, PathBuf};
use std::time::Duration;

use clinserve_core::batching::{BatchPolicy, EngineConfig};
use clinserve_core::model::{CostModel, CostProfile};
use clinserve_server::{inference, ServerConfig};
use serde::{Deserialize, Serialize};

use crate::profile::{default_corpus, read_corpus, LoadProfile, Protocol};
use crate::report::LabeledReport;
use crate::runner::run_closed_loop;
use crate::{write_demo_model, LoadgenError};

fn default_duration() -> f64 {
    60.0
}
fn default_warmup() -> f64 {
    5.0
}
fn default_users() -> Vec<usize> {
    vec![10, 50, 100]
}
fn default_protocol() -> Protocol {
    Protocol::Http
}
fn default_model() -> String {
    "sentiment".into()
}
fn default_executors() -> usize {
    1
}
fn default_max_queue() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellSpec {
    pub framework_mode: String,
    pub cost_profile: CostProfile,
    pub batch_max_size: usize,
    pub batch_max_delay_ms: f64,
    #[serde(default = "default_executors")]
    pub executors: usize,
    #[serde(default = "default_max_queue")]
    pub max_queue: usize,
}

impl CellSpec {
    pub fn new(cost_profile: CostProfile, batch_max_size: usize, batch_max_delay_ms: f64) -> Self {
        Self {
            framework_mode: cost_profile.as_str().to_string(),
            cost_profile,
            batch_max_size,
            batch_max_delay_ms,
            executors: default_executors(),
            max_queue: default_max_queue(),
        }
    }

    pub fn engine(&self) -> Result<EngineConfig, LoadgenError> {
        let policy = BatchPolicy::new(self.batch_max_size, self.batch_max_delay_ms, self.max_queue)
            .map_err(LoadgenError::Config)?;
        if self.executors == 0 {
            return Err(LoadgenError::Config("executors must be at least 1".into()));
        }
        Ok(EngineConfig { policy, executors: self.executors })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixConfig {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_warmup")]
    pub warmup_s: f64,
    #[serde(default = "default_users")]
    pub users: Vec<usize>,
    #[serde(default = "default_protocol")]
    pub protocol: Protocol,
    /// Registry to serve; a demo registry is generated when absent.
    #[serde(default)]
    pub registry: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model: String,
    /// One JSON body per line; defaults to built-in clinical notes.
    #[serde(default)]
    pub corpus: Option<PathBuf>,
    #[serde(default, rename = "cell")]
    pub cells: Vec<CellSpec>,
}

impl Default for MatrixConfig {
    fn default() -> Self {
        Self {
            duration_s: default_duration(),
            warmup_s: default_warmup(),
            users: default_users(),
            protocol: default_protocol(),
            registry: None,
            model: default_model(),
            corpus: None,
            cells: Self::standard_cells(),
        }
    }
}

impl MatrixConfig {
    /// cpu-like B=1, gpu-like B=1, gpu-like B=16 with a 5 ms window.
    pub fn standard_cells() -> Vec<CellSpec> {
        vec![
            CellSpec::new(CostProfile::CpuLike, 1, 0.0),
            CellSpec::new(CostProfile::GpuLike, 1, 0.0),
            CellSpec::new(CostProfile::GpuLike, 16, 5.0),
        ]
    }

    pub fn parse(text: &str) -> Result<Self, LoadgenError> {
        let mut cfg: MatrixConfig = toml::from_str(text).map_err(|e| LoadgenError::Config(e.to_string()))?;
        if cfg.cells.is_empty() {
            cfg.cells = Self::standard_cells();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, LoadgenError> {
        let text = std::fs::read_to_string(path).map_err(|e| LoadgenError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), LoadgenError> {
        if !(self.duration_s > 0.0) || !(self.warmup_s >= 0.0) || self.warmup_s >= self.duration_s {
            return Err(LoadgenError::Config(format!(
                "need 0 <= warmup_s < duration_s, got {} and {}",
                self.warmup_s, self.duration_s
            )));
        }
        if self.users.is_empty() || self.users.contains(&0) {
            return Err(LoadgenError::Config("users must be a nonempty list of positive counts".into()));
        }
        for cell in &self.cells {
            cell.engine()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellFailure {
    pub framework_mode: String,
    pub batch: usize,
    pub users: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixOutcome {
    pub reports: Vec<LabeledReport>,
    pub failures: Vec<CellFailure>,
}

async fn run_cell(
    cfg: &MatrixConfig,
    registry: &Path,
    corpus: &[String],
    cell: &CellSpec,
    users: usize,
) -> Result<LabeledReport, LoadgenError> {
    let mut server_cfg = ServerConfig::ephemeral(registry);
    server_cfg.engine = cell.engine()?;
    server_cfg.load.cost_override = Some(cell.cost_profile.cost());
    let server = inference::start(server_cfg)
        .await
        .map_err(|e| LoadgenError::Client(format!("server start: {e}")))?;

    let target = match cfg.protocol {
        Protocol::Http => format!("http://{}/v1/infer", server.http_addr),
        Protocol::Rpc => format!("rpc://{}", server.rpc_addr),
    };
    let mut profile = LoadProfile::new(target, cfg.protocol, corpus.to_vec());
    profile.virtual_users = users;
    profile.duration = Duration::from_secs_f64(cfg.duration_s);
    profile.warmup = Duration::from_secs_f64(cfg.warmup_s);
    profile.ready_url = Some(format!("http://{}/health/ready", server.metrics_addr));
    profile.metrics_url = Some(format!("http://{}/metrics", server.metrics_addr));

    let result = run_closed_loop(&profile).await;
    server.shutdown().await;
    Ok(LabeledReport {
        framework_mode: cell.framework_mode.clone(),
        batch: Some(cell.batch_max_size),
        report: result?,
    })
}

/// Runs every cell at every user level. A failing cell is recorded and the
/// rest still run.
pub async fn run_matrix(cfg: &MatrixConfig) -> Result<MatrixOutcome, LoadgenError> {
    cfg.validate()?;
    let corpus = match &cfg.corpus {
        Some(path) => read_corpus(path)?,
        None => default_corpus(&cfg.model),
    };
    let demo_dir;
    let registry = match &cfg.registry {
        Some(r) => r.clone(),
        None => {
            demo_dir = tempfile::tempdir().map_err(|e| LoadgenError::io(std::env::temp_dir(), e))?;
            write_demo_model(demo_dir.path(), &cfg.model, 1, CostModel::FREE)?;
            demo_dir.path().to_path_buf()
        }
    };

    let mut outcome = MatrixOutcome::default();
    for cell in &cfg.cells {
        for &users in &cfg.users {
            tracing::info!(mode = %cell.framework_mode, batch = cell.batch_max_size, users, "cell start");
            match run_cell(cfg, &registry, &corpus, cell, users).await {
                Ok(r) => outcome.reports.push(r),
                Err(e) => {
                    tracing::warn!(mode = %cell.framework_mode, users, error = %e, "cell failed");
                    outcome.failures.push(CellFailure {
                        framework_mode: cell.framework_mode.clone(),
                        batch: cell.batch_max_size,
                        users,
                        error: e.to_string(),
                    });
                }
            }
        }
    }
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_standard_matrix() {
        let cfg = MatrixConfig::parse("").unwrap();
        assert_eq!(cfg, MatrixConfig::default());
        assert_eq!(cfg.cells.len() * cfg.users.len(), 9);
    }

    #[test]
    fn explicit_cells() {
        let cfg = MatrixConfig::parse(
            r#"
duration_s = 2
warmup_s = 0.5
users = [1]
protocol = "rpc"

[[cell]]
framework_mode = "gpu-batched"
cost_profile = "gpu-like"
batch_max_size = 8
batch_max_delay_ms = 2.5
executors = 2
"#,
        )
        .unwrap();
        assert_eq!(cfg.protocol, Protocol::Rpc);
        assert_eq!(cfg.cells[0].executors, 2);
        assert_eq!(cfg.cells[0].max_queue, 1024);
        assert_eq!(cfg.cells[0].cost_profile, CostProfile::GpuLike);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(MatrixConfig::parse("warmup_s = 60").is_err());
        assert!(MatrixConfig::parse("users = []").is_err());
        assert!(MatrixConfig::parse("bogus = 1").is_err());
        assert!(MatrixConfig::parse(
            "[[cell]]\nframework_mode='x'\ncost_profile='gpu-like'\nbatch_max_size=0\nbatch_max_delay_ms=1\n"
        )
        .is_err());
    }
}
