//! Three-segment HMAC-SHA256 bearer tokens: `header.payload.signature`, each
//! segment unpadded base64url.

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine as _;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

type HmacSha256 = Hmac<Sha256>;

/// Scope word a token must carry to call inference.
pub const REQUIRED_SCOPE: &str = "infer";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub sub: String,
    pub scope: String,
    pub exp: i64,
}

impl Claims {
    /// Scopes are space-separated words.
    pub fn has_scope(&self, scope: &str) -> bool {
        self.scope.split(' ').any(|s| s == scope)
    }
}

#[derive(Debug, Deserialize)]
struct Header {
    alg: String,
    typ: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AuthError {
    #[error("malformed token")]
    Malformed,
    #[error("bad signature")]
    BadSignature,
    #[error("token expired")]
    Expired,
    #[error("token lacks the `infer` scope")]
    Forbidden,
}

impl AuthError {
    pub fn http_code(self) -> u16 {
        match self {
            AuthError::Forbidden => 403,
            _ => 401,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AuthError::Malformed => "malformed",
            AuthError::BadSignature => "bad_signature",
            AuthError::Expired => "expired",
            AuthError::Forbidden => "forbidden",
        }
    }
}

fn mac(key: &[u8]) -> HmacSha256 {
    HmacSha256::new_from_slice(key).expect("hmac accepts any key length")
}

/// Checks structure, signature, expiry and scope, in that order.
pub fn verify_token(token: &str, key: &[u8], now: i64) -> Result<Claims, AuthError> {
    let mut parts = token.split('.');
    let (Some(h), Some(p), Some(s), None) = (parts.next(), parts.next(), parts.next(), parts.next())
    else {
        return Err(AuthError::Malformed);
    };
    if h.is_empty() || p.is_empty() || s.is_empty() {
        return Err(AuthError::Malformed);
    }
    let decode = |seg: &str| URL_SAFE_NO_PAD.decode(seg).map_err(|_| AuthError::Malformed);
    let header: Header =
        serde_json::from_slice(&decode(h)?).map_err(|_| AuthError::Malformed)?;
    if header.alg != "HS256" || header.typ != "token" {
        return Err(AuthError::Malformed);
    }
    let claims: Claims = serde_json::from_slice(&decode(p)?).map_err(|_| AuthError::Malformed)?;
    let signature = decode(s)?;

    let signing_input = &token[..h.len() + 1 + p.len()];
    let mut m = mac(key);
    m.update(signing_input.as_bytes());
    m.verify_slice(&signature).map_err(|_| AuthError::BadSignature)?;

    if claims.exp <= now {
        return Err(AuthError::Expired);
    }
    if !claims.has_scope(REQUIRED_SCOPE) {
        return Err(AuthError::Forbidden);
    }
    Ok(claims)
}

pub fn sign_token(claims: &Claims, key: &[u8]) -> String {
    let header = URL_SAFE_NO_PAD.encode(br#"{"alg":"HS256","typ":"token"}"#);
    let payload = URL_SAFE_NO_PAD.encode(serde_json::to_vec(claims).expect("claims serialize"));
    let signing_input = format!("{header}.{payload}");
    let mut m = mac(key);
    m.update(signing_input.as_bytes());
    let sig = URL_SAFE_NO_PAD.encode(m.finalize().into_bytes());
    format!("{signing_input}.{sig}")
}

pub fn unix_now() -> i64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs() as i64)
        .unwrap_or(0)
}
