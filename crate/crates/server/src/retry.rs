//! Bounded retries with a per-try timeout, a total deadline and fixed backoff.

use std::future::Future;
use std::time::Duration;

use tokio::time::{timeout_at, Instant};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub per_try_timeout: Duration,
    pub total_timeout: Duration,
    pub backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 2,
            per_try_timeout: Duration::from_millis(1000),
            total_timeout: Duration::from_millis(3000),
            backoff: Duration::from_millis(50),
        }
    }
}

impl RetryPolicy {
    pub fn from_ms(max_retries: u32, per_try_ms: f64, total_ms: f64, backoff_ms: f64) -> Result<Self, String> {
        if !(per_try_ms > 0.0 && per_try_ms.is_finite()) {
            return Err(format!("per-try timeout must be positive, got {per_try_ms}"));
        }
        if !(total_ms > 0.0 && total_ms.is_finite()) {
            return Err(format!("total timeout must be positive, got {total_ms}"));
        }
        if !(backoff_ms >= 0.0 && backoff_ms.is_finite()) {
            return Err(format!("backoff must be nonnegative, got {backoff_ms}"));
        }
        let ms = |v: f64| Duration::from_secs_f64(v / 1000.0);
        Ok(Self {
            max_retries,
            per_try_timeout: ms(per_try_ms),
            total_timeout: ms(total_ms),
            backoff: ms(backoff_ms),
        })
    }
}

/// Why a single attempt produced no application response.
#[derive(Debug)]
pub enum AttemptError {
    /// Nothing reached the upstream; safe to retry.
    Connect(String),
    /// The upstream was reached but the exchange broke; not retried.
    Transport(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum GatewayError {
    #[error("upstream unavailable after {attempts} attempts: {last}")]
    UpstreamUnavailable { attempts: u32, last: String },
    #[error("upstream deadline exceeded after {attempts} attempts")]
    Timeout { attempts: u32 },
}

impl GatewayError {
    pub fn http_code(&self) -> u16 {
        match self {
            GatewayError::UpstreamUnavailable { .. } => 502,
            GatewayError::Timeout { .. } => 504,
        }
    }

    pub fn attempts(&self) -> u32 {
        match self {
            GatewayError::UpstreamUnavailable { attempts, .. } | GatewayError::Timeout { attempts } => *attempts,
        }
    }
}

/// Calls `attempt(n)` (n counts from 1) until it yields a response, the
/// retry budget runs out, or the total deadline passes. Returns the response
/// and the number of attempts made.
pub async fn forward_with_retries<T, F, Fut>(policy: &RetryPolicy, mut attempt: F) -> Result<(T, u32), GatewayError>
where
    F: FnMut(u32) -> Fut,
    Fut: Future<Output = Result<T, AttemptError>>,
{
    let deadline = Instant::now() + policy.total_timeout;
    let mut attempts = 0;
    loop {
        attempts += 1;
        let try_deadline = (Instant::now() + policy.per_try_timeout).min(deadline);
        let last = match timeout_at(try_deadline, attempt(attempts)).await {
            Ok(Ok(resp)) => return Ok((resp, attempts)),
            Ok(Err(AttemptError::Transport(msg))) => {
                return Err(GatewayError::UpstreamUnavailable { attempts, last: msg })
            }
            Ok(Err(AttemptError::Connect(msg))) => msg,
            Err(_) if try_deadline >= deadline => return Err(GatewayError::Timeout { attempts }),
            Err(_) => "per-try timeout".to_string(),
        };
        if attempts > policy.max_retries {
            return Err(GatewayError::UpstreamUnavailable { attempts, last });
        }
        let resume = Instant::now() + policy.backoff;
        if resume >= deadline {
            tokio::time::sleep_until(deadline).await;
            return Err(GatewayError::Timeout { attempts });
        }
        tokio::time::sleep_until(resume).await;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};

    fn policy(max_retries: u32, per_try: u64, total: u64, backoff: u64) -> RetryPolicy {
        RetryPolicy::from_ms(max_retries, per_try as f64, total as f64, backoff as f64).unwrap()
    }

    #[tokio::test]
    async fn refuse_once_then_succeed() {
        let calls = AtomicU32::new(0);
        let out = forward_with_retries(&policy(2, 100, 1000, 0), |_| async {
            match calls.fetch_add(1, Ordering::SeqCst) {
                0 => Err(AttemptError::Connect("refused".into())),
                _ => Ok("ok"),
            }
        })
        .await;
        assert_eq!(out, Ok(("ok", 2)));
    }

    #[tokio::test]
    async fn always_refused_exhausts_budget() {
        let out: Result<((), u32), _> = forward_with_retries(&policy(2, 100, 1000, 1), |_| async {
            Err(AttemptError::Connect("refused".into()))
        })
        .await;
        let err = out.unwrap_err();
        assert_eq!(err.attempts(), 3);
        assert_eq!(err.http_code(), 502);
    }

    #[tokio::test]
    async fn transport_errors_are_not_retried() {
        let out: Result<((), u32), _> = forward_with_retries(&policy(5, 100, 1000, 0), |_| async {
            Err(AttemptError::Transport("reset".into()))
        })
        .await;
        assert_eq!(out.unwrap_err().attempts(), 1);
    }

    #[tokio::test(start_paused = true)]
    async fn stalled_upstream_hits_the_deadline() {
        let started = Instant::now();
        let out: Result<((), u32), _> = forward_with_retries(&policy(5, 50, 120, 0), |_| async {
            std::future::pending().await
        })
        .await;
        assert_eq!(out, Err(GatewayError::Timeout { attempts: 3 }));
        assert_eq!(started.elapsed(), Duration::from_millis(120));
    }

    #[tokio::test(start_paused = true)]
    async fn backoff_past_deadline_times_out() {
        let out: Result<((), u32), _> = forward_with_retries(&policy(5, 50, 120, 100), |_| async {
            Err(AttemptError::Connect("refused".into()))
        })
        .await;
        assert_eq!(out, Err(GatewayError::Timeout { attempts: 2 }));
    }
}
