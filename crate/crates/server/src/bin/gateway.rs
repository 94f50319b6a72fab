use std::net::{IpAddr, SocketAddr};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use clinserve_server::{gateway, init_tracing, GatewayConfig, PhiMode, RetryPolicy};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Inline,
    Remote,
}

/// Authenticating gateway in front of the inference server.
#[derive(Debug, Parser)]
#[command(name = "gateway", version)]
struct Args {
    #[arg(long, default_value_t = 9000)]
    listen_port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    /// Inference server base URL.
    #[arg(long, default_value = "http://127.0.0.1:8000")]
    upstream: String,
    #[arg(long, env = "GW_AUTH_KEY", hide_env_values = true)]
    auth_key: String,
    #[arg(long, default_value_t = 2)]
    max_retries: u32,
    #[arg(long, default_value_t = 1000.0)]
    per_try_timeout_ms: f64,
    #[arg(long, default_value_t = 3000.0)]
    total_timeout_ms: f64,
    #[arg(long, default_value_t = 50.0)]
    backoff_ms: f64,
    #[arg(long, value_enum, default_value = "inline")]
    phi_mode: Mode,
    /// PHI service base URL, required with `--phi-mode remote`.
    #[arg(long)]
    phi_url: Option<String>,
    #[arg(long, default_value_t = 128)]
    max_upstream_connections: usize,
    #[arg(long, default_value = "sentiment")]
    model: String,
}

fn build_config(args: Args) -> Result<GatewayConfig, String> {
    let retry = RetryPolicy::from_ms(
        args.max_retries,
        args.per_try_timeout_ms,
        args.total_timeout_ms,
        args.backoff_ms,
    )?;
    let phi = match (args.phi_mode, args.phi_url) {
        (Mode::Inline, _) => PhiMode::Inline,
        (Mode::Remote, Some(url)) => PhiMode::Remote(url),
        (Mode::Remote, None) => return Err("--phi-mode remote needs --phi-url".into()),
    };
    if args.auth_key.is_empty() {
        return Err("GW_AUTH_KEY must not be empty".into());
    }
    let mut cfg = GatewayConfig::new(args.upstream, args.auth_key.into_bytes());
    cfg.listen = SocketAddr::new(args.bind, args.listen_port);
    cfg.retry = retry;
    cfg.phi = phi;
    cfg.max_upstream_connections = args.max_upstream_connections;
    cfg.model = args.model;
    Ok(cfg)
}

#[tokio::main]
async fn main() -> ExitCode {
    init_tracing();
    let cfg = match build_config(Args::parse()) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let gw = match gateway::start(cfg).await {
        Ok(g) => g,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(addr = %gw.addr, "gateway listening");
    let _ = tokio::signal::ctrl_c().await;
    gw.shutdown().await;
    ExitCode::SUCCESS
}
