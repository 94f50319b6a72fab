//! Replays an offered-load trace through the autoscaler control law.

use std::fs::File;
use std::io::{self, BufWriter};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use clinserve_core::autoscaler::{simulate, write_timeline, HpaConfig, LoadTrace, ReplicaPoolModel};

#[derive(Debug, Parser)]
#[command(name = "hpasim", about = "Simulate the horizontal autoscaler against a load trace")]
struct Args {
    /// CSV with header `time_s,offered_rps`.
    #[arg(long)]
    trace: PathBuf,
    /// Requests per second one replica can serve at 100% utilization.
    #[arg(long = "capacity-rps")]
    capacity_rps: f64,
    #[arg(long, default_value_t = 2)]
    min: u32,
    #[arg(long, default_value_t = 10)]
    max: u32,
    #[arg(long, default_value_t = 0.60)]
    target: f64,
    #[arg(long = "sync-period-s", default_value_t = 15.0)]
    sync_period_s: f64,
    #[arg(long, default_value_t = 0.10)]
    tolerance: f64,
    #[arg(long = "stabilization-s", default_value_t = 300.0)]
    stabilization_s: f64,
    #[arg(long = "readiness-delay-s", default_value_t = 10.0)]
    readiness_delay_s: f64,
    /// Replicas at t=0; defaults to --min.
    #[arg(long)]
    initial: Option<u32>,
    /// Timeline CSV; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hpasim: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(args: &Args) -> Result<(), Box<dyn std::error::Error>> {
    let trace = LoadTrace::read_csv(&args.trace)?;
    let cfg = HpaConfig {
        min_replicas: args.min,
        max_replicas: args.max,
        target_utilization: args.target,
        sync_period_s: args.sync_period_s,
        tolerance: args.tolerance,
        scale_down_stabilization_s: args.stabilization_s,
    };
    let pool = ReplicaPoolModel {
        current_replicas: args.initial.unwrap_or(args.min),
        per_replica_capacity_rps: args.capacity_rps,
        readiness_delay_s: args.readiness_delay_s,
    };
    let timeline = simulate(&trace, &pool, &cfg)?;
    match &args.out {
        Some(path) => write_timeline(&timeline, BufWriter::new(File::create(path)?))?,
        None => write_timeline(&timeline, io::stdout().lock())?,
    }
    Ok(())
}
