//! Framed-RPC listener: 4-byte big-endian length prefix, JSON body.

use std::sync::Arc;

use clinserve_core::wire::{read_frame, write_frame, FrameError, RpcResponse, Status};
use tokio::io::BufReader;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::watch;

use crate::inference::AppState;

pub(crate) async fn serve(listener: TcpListener, state: Arc<AppState>, stop: watch::Receiver<bool>) {
    let mut stopped = stop.clone();
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, _)) => {
                    let _ = stream.set_nodelay(true);
                    let state = state.clone();
                    let stop = stop.clone();
                    tokio::spawn(async move {
                        tokio::select! {
                            _ = connection(stream, state) => {}
                            _ = crate::inference::shutdown_signal(stop) => {}
                        }
                    });
                }
                Err(e) => tracing::warn!("rpc accept failed: {e}"),
            },
            _ = stopped.wait_for(|s| *s) => return,
        }
    }
}

async fn reply(stream: &mut BufReader<TcpStream>, resp: &RpcResponse) -> std::io::Result<()> {
    let body = serde_json::to_vec(resp).expect("rpc response serializes");
    write_frame(stream, &body).await
}

async fn connection(stream: TcpStream, state: Arc<AppState>) {
    let mut stream = BufReader::new(stream);
    loop {
        let body = match read_frame(&mut stream).await {
            Ok(body) => body,
            Err(FrameError::Closed) => return,
            Err(e @ (FrameError::Oversize(_) | FrameError::Truncated)) => {
                let _ = reply(&mut stream, &RpcResponse::error(Status::BadRequest, e.to_string())).await;
                return;
            }
            Err(FrameError::Io(e)) => {
                tracing::debug!("rpc connection error: {e}");
                return;
            }
        };
        let handled = state.handle(&body).await;
        let resp = match handled.body {
            Ok(ok) => RpcResponse::ok(ok),
            Err(msg) => RpcResponse::error(handled.status, msg),
        };
        if reply(&mut stream, &resp).await.is_err() {
            return;
        }
    }
}
