//! Network services of the clinserve stack: the batching inference server
//! (HTTP, framed RPC and metrics listeners), the authenticating gateway and
//! the standalone PHI preprocessing service.

pub mod auth;
pub mod gateway;
pub mod inference;
pub mod metrics;
pub mod phi_service;
pub mod retry;
mod rpc;

pub use gateway::{GatewayConfig, GatewayHandle, PhiMode};
pub use inference::{ServerConfig, ServerHandle};
pub use retry::RetryPolicy;

/// Installs a `RUST_LOG`-driven stderr subscriber for the binaries.
pub fn init_tracing() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}
