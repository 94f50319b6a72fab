use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use clinserve_core::config::FlatConfig;
use clinserve_server::{inference, init_tracing, ServerConfig};

/// Dynamic-batching inference server.
#[derive(Debug, Parser)]
#[command(name = "inference-server", version)]
struct Args {
    #[arg(long, env = "SRV_PORT_HTTP", default_value_t = 8000)]
    port_http: u16,
    #[arg(long, env = "SRV_PORT_RPC", default_value_t = 8001)]
    port_rpc: u16,
    #[arg(long, env = "SRV_PORT_METRICS", default_value_t = 8002)]
    port_metrics: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    /// Model registry root (`<root>/<name>/<version>/model.config`).
    #[arg(long, default_value = "models")]
    registry: PathBuf,
    /// Flat key=value config (batch.*, executors.count, admin.enabled,
    /// model.cost_profile).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Enables POST /v1/admin/reload regardless of the config file.
    #[arg(long)]
    admin: bool,
}

fn build_config(args: &Args) -> Result<ServerConfig, String> {
    let mut cfg = ServerConfig::new(&args.registry);
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let flat = FlatConfig::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.apply_flat(&flat).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    cfg.admin_enabled |= args.admin;
    cfg.http = SocketAddr::new(args.bind, args.port_http);
    cfg.rpc = SocketAddr::new(args.bind, args.port_rpc);
    cfg.metrics = SocketAddr::new(args.bind, args.port_metrics);
    Ok(cfg)
}

#[tokio::main]
async fn main() -> ExitCode {
    init_tracing();
    let args = Args::parse();
    let cfg = match build_config(&args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let server = match inference::start(cfg).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(
        http = %server.http_addr,
        rpc = %server.rpc_addr,
        metrics = %server.metrics_addr,
        "listening"
    );
    let _ = tokio::signal::ctrl_c().await;
    tracing::info!("shutting down");
    server.shutdown().await;
    ExitCode::SUCCESS
}
