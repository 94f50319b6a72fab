//! Reference computations for tests.
//!
//! Each oracle is written from the stated rule alone and shares no code with
//! the crates it checks: batch formation is replayed by fixed-step time
//! stepping, the autoscaler law in exact integer arithmetic, HMAC from its
//! RFC 2104 construction over a bare SHA-256, and percentiles by full sort.

pub mod batching;
pub mod hmac;
pub mod hpa;
pub mod percentile;
pub mod tokens;
