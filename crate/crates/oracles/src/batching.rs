use std::collections::VecDeque;

/// Replays a batch former in fixed steps of one time unit.
///
/// All times are integers in a common unit. At each step: executors whose
/// work ends at or before the step are freed, arrivals at the step are
/// admitted (or rejected at `max_queue`), and while an executor is free and
/// the queue holds a full batch or its oldest entry has waited `window`,
/// the oldest `min(len, max_batch)` entries are dispatched.
/// Returns `(size, dispatch_time)` pairs and rejected arrival indices.
pub fn dispatch_oracle(
    arrivals: &[u64],
    max_batch: usize,
    window: u64,
    max_queue: usize,
    executors: usize,
    service: impl Fn(usize) -> u64,
) -> (Vec<(usize, u64)>, Vec<usize>) {
    let mut queue: VecDeque<(usize, u64)> = VecDeque::new();
    let mut running: Vec<u64> = Vec::new();
    let mut out = Vec::new();
    let mut rejected = Vec::new();
    let mut idx = 0;
    let mut t = 0u64;
    while idx < arrivals.len() || !queue.is_empty() {
        while idx < arrivals.len() && arrivals[idx] == t {
            if queue.len() < max_queue {
                queue.push_back((idx, t));
            } else {
                rejected.push(idx);
            }
            idx += 1;
        }
        loop {
            running.retain(|&end| end > t);
            if running.len() >= executors || queue.is_empty() {
                break;
            }
            let oldest = queue[0].1;
            if queue.len() < max_batch && t - oldest < window {
                break;
            }
            let n = queue.len().min(max_batch);
            queue.drain(..n);
            out.push((n, t));
            running.push(t + service(n));
        }
        t += 1;
    }
    (out, rejected)
}
