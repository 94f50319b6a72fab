use std::collections::VecDeque;
use std::time::Instant;

use super::BatchPolicy;

#[derive(Debug)]
pub struct Queued<T> {
    pub id: u64,
    pub enqueued_at: Instant,
    pub item: T,
}

/// Oldest-first slice of the queue taken at `formed_at`.
#[derive(Debug)]
pub struct Batch<T> {
    pub requests: Vec<Queued<T>>,
    pub formed_at: Instant,
}

impl<T> Batch<T> {
    pub fn len(&self) -> usize {
        self.requests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.requests.is_empty()
    }
}

/// Returned by [`BatchQueue::enqueue`] when the queue is at capacity.
#[derive(Debug, PartialEq, Eq)]
pub struct Rejected<T>(pub T);

#[derive(Debug)]
pub struct BatchQueue<T> {
    items: VecDeque<Queued<T>>,
    next_id: u64,
}

impl<T> Default for BatchQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> BatchQueue<T> {
    pub fn new() -> Self {
        Self {
            items: VecDeque::new(),
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Queued<T>> {
        self.items.iter()
    }

    /// Accepts iff the queue holds fewer than `max_queue_len` items.
    pub fn enqueue(
        &mut self,
        item: T,
        now: Instant,
        policy: &BatchPolicy,
    ) -> Result<u64, Rejected<T>> {
        if self.items.len() >= policy.max_queue_len {
            return Err(Rejected(item));
        }
        let id = self.next_id;
        self.next_id += 1;
        self.items.push_back(Queued {
            id,
            enqueued_at: now,
            item,
        });
        Ok(id)
    }

    /// A batch fires when the queue holds a full batch, or when the oldest
    /// request has waited at least the window. It takes the oldest
    /// `min(len, max_batch_size)` requests.
    pub fn form_batch(&mut self, now: Instant, policy: &BatchPolicy) -> Option<Batch<T>> {
        let oldest = self.items.front()?;
        let full = self.items.len() >= policy.max_batch_size;
        let expired = now.saturating_duration_since(oldest.enqueued_at) >= policy.max_queue_delay;
        if !(full || expired) {
            return None;
        }
        let take = self.items.len().min(policy.max_batch_size);
        Some(Batch {
            requests: self.items.drain(..take).collect(),
            formed_at: now,
        })
    }

    /// Earliest instant at which [`form_batch`](Self::form_batch) would fire
    /// without further arrivals.
    pub fn ready_at(&self, policy: &BatchPolicy) -> Option<Instant> {
        let oldest = self.items.front()?;
        if self.items.len() >= policy.max_batch_size {
            Some(oldest.enqueued_at)
        } else {
            Some(oldest.enqueued_at + policy.max_queue_delay)
        }
    }

    pub fn drain_all(&mut self) -> impl Iterator<Item = Queued<T>> + '_ {
        self.items.drain(..)
    }
}
