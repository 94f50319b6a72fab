/// Nearest-rank percentile by full sort: the `ceil(q * n)`-th smallest value.
pub fn nearest_rank_oracle(samples: &[f64], q: f64) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    // rank in 1..=n, computed without floating ceil on exact products
    let mut rank = 1;
    while (rank as f64) < q * n as f64 {
        rank += 1;
    }
    sorted[rank.min(n) - 1]
}
