use std::net::{IpAddr, SocketAddr};
use std::process::ExitCode;

use clap::Parser;
use clinserve_server::init_tracing;
use clinserve_server::phi_service::{self, PhiServiceConfig};

/// PHI de-identification and normalization service.
#[derive(Debug, Parser)]
#[command(name = "phi-service", version)]
struct Args {
    #[arg(long, default_value_t = 9100)]
    listen_port: u16,
    #[arg(long, default_value = "0.0.0.0")]
    bind: IpAddr,
    #[arg(long, default_value_t = 128)]
    max_seq_len: usize,
}

#[tokio::main]
async fn main() -> ExitCode {
    init_tracing();
    let args = Args::parse();
    let cfg = PhiServiceConfig {
        listen: SocketAddr::new(args.bind, args.listen_port),
        max_seq_len: args.max_seq_len,
    };
    let svc = match phi_service::start(cfg).await {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    tracing::info!(addr = %svc.addr, "phi service listening");
    let _ = tokio::signal::ctrl_c().await;
    svc.shutdown().await;
    ExitCode::SUCCESS
}
