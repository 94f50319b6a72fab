//! Closed-loop load generation against the inference server or gateway,
//! plus the batch-size experiment matrix.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clinserve_core::model::CostModel;

pub mod matrix;
pub mod percentile;
pub mod profile;
pub mod report;
pub mod runner;

pub use matrix::{run_matrix, CellSpec, MatrixConfig, MatrixOutcome};
pub use percentile::{compute_percentile, PercentileError};
pub use profile::{LoadProfile, Protocol};
pub use report::{emit_report, ReportRow};
pub use runner::{run_closed_loop, LatencySample, Outcome, RunReport};

#[derive(Debug, thiserror::Error)]
pub enum LoadgenError {
    #[error("invalid profile: {0}")]
    Profile(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("target {target} not ready after {waited:?}")]
    NotReady { target: String, waited: Duration },
    #[error("client: {0}")]
    Client(String),
    #[error("invalid matrix config: {0}")]
    Config(String),
    #[error("nothing to report")]
    EmptyReport,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl LoadgenError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        LoadgenError::Io { path: path.into(), source }
    }
}

const DEMO_LEXICON: &str = "\
good\t1
great\t2
happy\t1
improving\t1
stable\t1
fine\t1
well\t1
bad\t-1
awful\t-2
pain\t-1
severe\t-2
worse\t-1
poor\t-1
anxious\t-1
";

/// Writes a one-model registry (`<root>/<name>/<version>/`) with a small
/// clinical sentiment lexicon and the given cost.
pub fn write_demo_model(root: &Path, name: &str, version: u32, cost: CostModel) -> Result<(), LoadgenError> {
    let dir = root.join(name).join(version.to_string());
    fs::create_dir_all(&dir).map_err(|e| LoadgenError::io(&dir, e))?;
    let lexicon = dir.join("lexicon.tsv");
    fs::write(&lexicon, DEMO_LEXICON).map_err(|e| LoadgenError::io(&lexicon, e))?;
    let config = dir.join("model.config");
    fs::write(
        &config,
        format!(
            "kind=lexicon\nlexicon=lexicon.tsv\nmax_seq_len=128\nbase_ms={}\nper_item_ms={}\n",
            cost.base_ms, cost.per_item_ms
        ),
    )
    .map_err(|e| LoadgenError::io(&config, e))
}
