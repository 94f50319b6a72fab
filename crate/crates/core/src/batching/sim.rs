use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::time::{Duration, Instant};

use super::queue::BatchQueue;
use super::BatchPolicy;

/// One dispatched batch, timed from the start of the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DispatchRecord {
    pub size: usize,
    pub dispatch_at: Duration,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DispatchTrace {
    pub dispatches: Vec<DispatchRecord>,
    /// Arrivals turned away by the queue bound, by index into the trace.
    pub rejected: Vec<usize>,
}

/// Replays an arrival trace through [`BatchQueue`] in virtual time.
///
/// `arrivals` are offsets from time zero in nondecreasing order; `service`
/// gives the execution time of a batch by size. Arrivals at an instant are
/// enqueued before batches form at that instant, and an executor finishing
/// at an instant is free for batches formed at that instant.
pub fn simulate_dispatch(
    arrivals: &[Duration],
    policy: &BatchPolicy,
    executors: usize,
    service: impl Fn(usize) -> Duration,
) -> DispatchTrace {
    assert!(executors >= 1);
    debug_assert!(arrivals.windows(2).all(|w| w[0] <= w[1]));
    let origin = Instant::now();
    let mut queue = BatchQueue::new();
    let mut busy_until: BinaryHeap<Reverse<Duration>> = BinaryHeap::new();
    let mut trace = DispatchTrace::default();
    let mut next = 0;
    let mut now = Duration::ZERO;

    loop {
        while next < arrivals.len() && arrivals[next] <= now {
            if queue.enqueue(next, origin + arrivals[next], policy).is_err() {
                trace.rejected.push(next);
            }
            next += 1;
        }
        // a zero-length execution frees its executor within the same instant
        loop {
            while busy_until.peek().is_some_and(|Reverse(t)| *t <= now) {
                busy_until.pop();
            }
            if busy_until.len() >= executors {
                break;
            }
            let Some(batch) = queue.form_batch(origin + now, policy) else {
                break;
            };
            trace.dispatches.push(DispatchRecord {
                size: batch.len(),
                dispatch_at: now,
            });
            busy_until.push(Reverse(now + service(batch.len())));
        }

        let mut candidates = Vec::with_capacity(3);
        if next < arrivals.len() {
            candidates.push(arrivals[next]);
        }
        if let Some(Reverse(t)) = busy_until.peek() {
            if !queue.is_empty() {
                candidates.push(*t);
            }
        }
        if busy_until.len() < executors {
            if let Some(at) = queue.ready_at(policy) {
                candidates.push(at.duration_since(origin).max(now));
            }
        }
        match candidates.into_iter().min() {
            Some(t) if t > now => now = t,
            Some(_) => unreachable!("virtual clock did not advance"),
            None => break,
        }
    }
    trace
}
