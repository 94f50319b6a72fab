//! Nearest-rank percentiles.

#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
pub enum PercentileError {
    #[error("percentile of an empty sample set is undefined")]
    Empty,
    #[error("quantile must lie in (0, 1], got {0}")]
    Quantile(f64),
    #[error("sample set contains a non-finite value")]
    NonFinite,
}

/// The `ceil(q * n)`-th smallest sample (1-based), clamped to `1..=n`.
pub fn compute_percentile(samples: &[f64], q: f64) -> Result<f64, PercentileError> {
    if samples.is_empty() {
        return Err(PercentileError::Empty);
    }
    if !(q > 0.0 && q <= 1.0) {
        return Err(PercentileError::Quantile(q));
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(PercentileError::NonFinite);
    }
    let n = samples.len();
    let rank = ((q * n as f64).ceil() as usize).clamp(1, n);
    let mut work = samples.to_vec();
    let (_, nth, _) = work.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*nth)
}

/// p50 and p95 of `samples`, or `None` when there are none.
pub fn p50_p95(samples: &[f64]) -> Option<(f64, f64)> {
    Some((
        compute_percentile(samples, 0.50).ok()?,
        compute_percentile(samples, 0.95).ok()?,
    ))
}
