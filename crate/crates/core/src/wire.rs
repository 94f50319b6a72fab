//! Request/response bodies shared by the HTTP and framed-RPC listeners, the
//! status table both map onto, and the 4-byte big-endian length framing.

use serde::{Deserialize, Serialize};
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};

use crate::model::Label;

/// Upper bound on a single input string, in bytes.
pub const MAX_INPUT_BYTES: usize = 16 * 1024;
/// Upper bound on a frame body, in bytes.
pub const MAX_FRAME_BYTES: usize = 1024 * 1024;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferRequestWire {
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub version: Option<u32>,
    pub inputs: Vec<String>,
}

impl InferRequestWire {
    pub fn new(model: impl Into<String>, inputs: Vec<String>) -> Self {
        Self {
            model: model.into(),
            version: None,
            inputs,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.version == Some(0) {
            return Err("version must be a positive integer".into());
        }
        if self.inputs.is_empty() {
            return Err("inputs must be a nonempty list".into());
        }
        if let Some(i) = self.inputs.iter().position(|s| s.len() > MAX_INPUT_BYTES) {
            return Err(format!("input {i} exceeds {MAX_INPUT_BYTES} bytes"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputWire {
    pub label: Label,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerTiming {
    pub queue_wait: f64,
    pub execution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InferResponseWire {
    pub outputs: Vec<OutputWire>,
    pub model_version: u32,
    pub server_timing_ms: ServerTiming,
}

/// Outcome classes with their RPC codes; HTTP codes via [`Status::http_code`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Status {
    Ok,
    BadRequest,
    NotFound,
    Internal,
    Unavailable,
}

impl Status {
    pub const ALL: [Status; 5] = [
        Status::Ok,
        Status::NotFound,
        Status::Unavailable,
        Status::BadRequest,
        Status::Internal,
    ];

    pub fn rpc_code(self) -> u32 {
        match self {
            Status::Ok => 0,
            Status::BadRequest => 3,
            Status::NotFound => 4,
            Status::Internal => 13,
            Status::Unavailable => 14,
        }
    }

    pub fn from_rpc_code(code: u32) -> Option<Self> {
        Self::ALL.into_iter().find(|s| s.rpc_code() == code)
    }

    pub fn http_code(self) -> u16 {
        match self {
            Status::Ok => 200,
            Status::BadRequest => 400,
            Status::NotFound => 404,
            Status::Internal => 500,
            Status::Unavailable => 503,
        }
    }

    /// Metric label for `inference_requests_total{outcome=...}`.
    pub fn outcome(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::BadRequest => "bad_request",
            Status::NotFound => "not_found",
            Status::Internal => "internal",
            Status::Unavailable => "overload",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}

/// Body of every RPC response frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpcResponse {
    pub status: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<OutputWire>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_version: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_timing_ms: Option<ServerTiming>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RpcResponse {
    pub fn ok(resp: InferResponseWire) -> Self {
        Self {
            status: Status::Ok.rpc_code(),
            outputs: Some(resp.outputs),
            model_version: Some(resp.model_version),
            server_timing_ms: Some(resp.server_timing_ms),
            error: None,
        }
    }

    pub fn error(status: Status, message: impl Into<String>) -> Self {
        Self {
            status: status.rpc_code(),
            outputs: None,
            model_version: None,
            server_timing_ms: None,
            error: Some(message.into()),
        }
    }

    /// The inference payload of a status-0 frame.
    pub fn into_response(self) -> Option<InferResponseWire> {
        match self {
            RpcResponse {
                status: 0,
                outputs: Some(outputs),
                model_version: Some(model_version),
                server_timing_ms: Some(server_timing_ms),
                ..
            } => Some(InferResponseWire {
                outputs,
                model_version,
                server_timing_ms,
            }),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FrameError {
    /// Clean EOF before any prefix byte.
    #[error("connection closed")]
    Closed,
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_BYTES}-byte limit")]
    Oversize(usize),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads one length-prefixed frame body (which may be empty).
pub async fn read_frame<R: AsyncRead + Unpin>(reader: &mut R) -> Result<Vec<u8>, FrameError> {
    let mut prefix = [0u8; 4];
    let mut filled = 0;
    while filled < prefix.len() {
        match reader.read(&mut prefix[filled..]).await? {
            0 if filled == 0 => return Err(FrameError::Closed),
            0 => return Err(FrameError::Truncated),
            n => filled += n,
        }
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME_BYTES {
        return Err(FrameError::Oversize(len));
    }
    let mut body = vec![0u8; len];
    match reader.read_exact(&mut body).await {
        Ok(_) => Ok(body),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(FrameError::Truncated),
        Err(e) => Err(e.into()),
    }
}

pub async fn write_frame<W: AsyncWrite + Unpin>(writer: &mut W, body: &[u8]) -> std::io::Result<()> {
    let len = u32::try_from(body.len()).map_err(|_| {
        std::io::Error::new(std::io::ErrorKind::InvalidInput, "frame body too large")
    })?;
    let mut buf = Vec::with_capacity(4 + body.len());
    buf.extend_from_slice(&len.to_be_bytes());
    buf.extend_from_slice(body);
    writer.write_all(&buf).await?;
    writer.flush().await
}
