use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use clinserve_loadgen::profile::{default_corpus, read_corpus};
use clinserve_loadgen::report::{markdown_table, LabeledReport, ReportRow};
use clinserve_loadgen::{emit_report, run_closed_loop, run_matrix, LoadProfile, LoadgenError, MatrixConfig, Protocol};
use clinserve_server::auth::{sign_token, unix_now, Claims};

#[derive(Parser)]
#[command(name = "loadgen", about = "Closed-loop load generator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Drive one closed-loop run against a server or gateway.
    Run(RunArgs),
    /// Run the batch-size experiment matrix against in-process servers.
    Matrix {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
    /// Print a signed bearer token.
    Token {
        #[arg(long, env = "GW_AUTH_KEY", hide_env_values = true)]
        key: String,
        #[arg(long, default_value = "loadgen")]
        sub: String,
        #[arg(long, default_value = "infer")]
        scope: String,
        #[arg(long, default_value_t = 3600)]
        ttl_s: i64,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, default_value_t = 10)]
    users: usize,
    /// Seconds.
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
    /// Seconds excluded from the summary.
    #[arg(long, default_value_t = 5.0)]
    warmup: f64,
    /// Endpoint URL for http, `host:port` for rpc.
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "http")]
    protocol: Protocol,
    /// One JSON request body per line.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    token_file: Option<PathBuf>,
    #[arg(long, default_value = "results")]
    out: PathBuf,
    #[arg(long)]
    ready_url: Option<String>,
    /// Prometheus endpoint scraped for the mean batch size.
    #[arg(long)]
    metrics_url: Option<String>,
    #[arg(long, default_value = "direct")]
    label: String,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long, default_value = "sentiment")]
    model: String,
}

async fn run(args: RunArgs) -> Result<(), LoadgenError> {
    let corpus = match &args.corpus {
        Some(p) => read_corpus(p)?,
        None => default_corpus(&args.model),
    };
    let mut profile = LoadProfile::new(args.target, args.protocol, corpus);
    profile.virtual_users = args.users;
    profile.duration = secs(args.duration, "duration")?;
    profile.warmup = secs(args.warmup, "warmup")?;
    profile.ready_url = args.ready_url;
    profile.metrics_url = args.metrics_url;
    if let Some(path) = &args.token_file {
        let token = std::fs::read_to_string(path).map_err(|e| LoadgenError::io(path, e))?;
        profile.token = Some(token.trim().to_string());
    }
    let report = run_closed_loop(&profile).await?;
    let labeled = LabeledReport { framework_mode: args.label, batch: args.batch, report };
    emit_report(&args.out, std::slice::from_ref(&labeled))?;
    print!("{}", markdown_table(&[ReportRow::from(&labeled)]));
    for (outcome, n) in &labeled.report.outcome_counts {
        println!("{outcome}: {n}");
    }
    Ok(())
}

fn secs(v: f64, what: &str) -> Result<Duration, LoadgenError> {
    Duration::try_from_secs_f64(v).map_err(|_| LoadgenError::Profile(format!("{what} must be a nonnegative number of seconds")))
}

#[tokio::main]
async fn main() -> ExitCode {
    clinserve_server::init_tracing();
    let result = match Cli::parse().command {
        Command::Run(args) => run(args).await,
        Command::Matrix { config, out } => async {
            let cfg = match config {
                Some(p) => MatrixConfig::load(&p)?,
                None => MatrixConfig::default(),
            };
            let outcome = run_matrix(&cfg).await?;
            for f in &outcome.failures {
                eprintln!("cell {} batch={} users={} failed: {}", f.framework_mode, f.batch, f.users, f.error);
            }
            emit_report(&out, &outcome.reports)?;
            let rows: Vec<ReportRow> = outcome.reports.iter().map(ReportRow::from).collect();
            print!("{}", markdown_table(&rows));
            Ok(())
        }
        .await,
        Command::Token { key, sub, scope, ttl_s } => {
            let claims = Claims { sub, scope, exp: unix_now() + ttl_s };
            println!("{}", sign_token(&claims, key.as_bytes()));
            Ok(())
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loadgen: {e}");
            ExitCode::FAILURE
        }
    }
}
