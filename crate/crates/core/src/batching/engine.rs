use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{Receiver, Sender};
use tokio::sync::oneshot;

use super::queue::{Batch, BatchQueue, Rejected};
use super::{EngineConfig, EngineError};

/// Runs one batch as a single execution. Implementations must return exactly
/// one output per input, in order.
pub trait BatchExecutor: Send + Sync + 'static {
    type Input: Send + 'static;
    type Output: Send + 'static;

    fn execute(&self, inputs: &[Self::Input]) -> Result<Vec<Self::Output>, String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completed<O> {
    pub output: O,
    pub queue_wait: Duration,
    pub execution: Duration,
    pub batch_size: usize,
}

pub type Completion<O> = Result<Completed<O>, EngineError>;

/// Receiving half of a request's one-shot reply.
pub type Ticket<O> = oneshot::Receiver<Completion<O>>;

/// A queued unit of work and the handle that completes it exactly once.
#[derive(Debug)]
pub struct PendingRequest<I, O> {
    pub payload: I,
    reply: oneshot::Sender<Completion<O>>,
}

impl<I, O> PendingRequest<I, O> {
    fn complete(self, result: Completion<O>) {
        // the submitter may have gone away; the reply is still consumed here
        let _ = self.reply.send(result);
    }
}

#[derive(Debug, Default)]
struct Counters {
    submitted: AtomicU64,
    ok: AtomicU64,
    rejected: AtomicU64,
    shutdown: AtomicU64,
    internal: AtomicU64,
    batches: AtomicU64,
    batch_size_sum: AtomicU64,
    queue_depth: AtomicU64,
}

/// Point-in-time counter values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub submitted: u64,
    pub ok: u64,
    pub rejected: u64,
    pub shutdown: u64,
    pub internal: u64,
    pub batches: u64,
    pub batch_size_sum: u64,
    pub queue_depth: u64,
}

impl EngineStats {
    pub fn completed(&self) -> u64 {
        self.ok + self.rejected + self.shutdown + self.internal
    }
}

struct State<I, O> {
    queue: BatchQueue<PendingRequest<I, O>>,
    free_executors: usize,
    shutdown: bool,
}

struct Shared<E: BatchExecutor> {
    config: EngineConfig,
    state: Mutex<State<E::Input, E::Output>>,
    wake: Condvar,
    counters: Counters,
    executor: E,
}

impl<E: BatchExecutor> Shared<E> {
    fn lock(&self) -> MutexGuard<'_, State<E::Input, E::Output>> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// A batching scheduler plus `executors` worker threads.
///
/// Producers call [`submit`](Engine::submit) from any thread and await the
/// returned ticket. Every submitted request completes exactly once: with an
/// output, an overload rejection, a shutdown error, or an internal error.
pub struct Engine<E: BatchExecutor> {
    shared: Arc<Shared<E>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl<E: BatchExecutor> Engine<E> {
    pub fn start(config: EngineConfig, executor: E) -> Self {
        assert!(config.executors >= 1, "engine needs at least one executor");
        let shared = Arc::new(Shared {
            config,
            state: Mutex::new(State {
                queue: BatchQueue::new(),
                free_executors: config.executors,
                shutdown: false,
            }),
            wake: Condvar::new(),
            counters: Counters::default(),
            executor,
        });
        let (tx, rx) = crossbeam_channel::unbounded::<Dispatched<E>>();
        let mut threads = Vec::with_capacity(config.executors + 1);
        for idx in 0..config.executors {
            let shared = shared.clone();
            let rx = rx.clone();
            threads.push(
                std::thread::Builder::new()
                    .name(format!("batch-exec-{idx}"))
                    .spawn(move || run_executor(shared, rx))
                    .expect("spawn executor thread"),
            );
        }
        let sched = shared.clone();
        threads.push(
            std::thread::Builder::new()
                .name("batch-scheduler".into())
                .spawn(move || run_scheduler(sched, tx))
                .expect("spawn scheduler thread"),
        );
        Self {
            shared,
            threads: Mutex::new(threads),
        }
    }

    pub fn config(&self) -> EngineConfig {
        self.shared.config
    }

    pub fn executor(&self) -> &E {
        &self.shared.executor
    }

    /// Enqueues one request. A full queue or a stopped engine completes the
    /// ticket immediately.
    pub fn submit(&self, payload: E::Input) -> Ticket<E::Output> {
        let (reply, ticket) = oneshot::channel();
        let request = PendingRequest { payload, reply };
        let counters = &self.shared.counters;
        counters.submitted.fetch_add(1, Ordering::Relaxed);

        let mut state = self.shared.lock();
        if state.shutdown {
            drop(state);
            counters.shutdown.fetch_add(1, Ordering::Relaxed);
            request.complete(Err(EngineError::Shutdown));
            return ticket;
        }
        let policy = self.shared.config.policy;
        match state.queue.enqueue(request, Instant::now(), &policy) {
            Ok(_) => {
                counters
                    .queue_depth
                    .store(state.queue.len() as u64, Ordering::Relaxed);
                drop(state);
                self.shared.wake.notify_one();
            }
            Err(Rejected(request)) => {
                drop(state);
                counters.rejected.fetch_add(1, Ordering::Relaxed);
                request.complete(Err(EngineError::Overload));
            }
        }
        ticket
    }

    pub fn stats(&self) -> EngineStats {
        let c = &self.shared.counters;
        EngineStats {
            submitted: c.submitted.load(Ordering::Relaxed),
            ok: c.ok.load(Ordering::Relaxed),
            rejected: c.rejected.load(Ordering::Relaxed),
            shutdown: c.shutdown.load(Ordering::Relaxed),
            internal: c.internal.load(Ordering::Relaxed),
            batches: c.batches.load(Ordering::Relaxed),
            batch_size_sum: c.batch_size_sum.load(Ordering::Relaxed),
            queue_depth: c.queue_depth.load(Ordering::Relaxed),
        }
    }

    pub fn is_running(&self) -> bool {
        !self.shared.lock().shutdown
    }

    /// Stops accepting work, fails every queued request with
    /// [`EngineError::Shutdown`], lets in-flight batches finish and joins
    /// all threads. Idempotent.
    pub fn shutdown(&self) {
        self.shared.lock().shutdown = true;
        self.shared.wake.notify_all();
        let threads = std::mem::take(&mut *self.threads.lock().unwrap_or_else(|p| p.into_inner()));
        for t in threads {
            let _ = t.join();
        }
    }
}

impl<E: BatchExecutor> Drop for Engine<E> {
    fn drop(&mut self) {
        self.shutdown();
    }
}

type Dispatched<E> =
    Batch<PendingRequest<<E as BatchExecutor>::Input, <E as BatchExecutor>::Output>>;

fn run_scheduler<E: BatchExecutor>(shared: Arc<Shared<E>>, dispatch: Sender<Dispatched<E>>) {
    let policy = shared.config.policy;
    let mut state = shared.lock();
    loop {
        if state.shutdown {
            let drained: Vec<_> = state.queue.drain_all().collect();
            shared.counters.queue_depth.store(0, Ordering::Relaxed);
            drop(state);
            shared
                .counters
                .shutdown
                .fetch_add(drained.len() as u64, Ordering::Relaxed);
            for queued in drained {
                queued.item.complete(Err(EngineError::Shutdown));
            }
            // dropping the sender lets executors exit after in-flight work
            return;
        }
        if state.free_executors == 0 {
            state = shared.wake.wait(state).unwrap_or_else(|p| p.into_inner());
            continue;
        }
        let now = Instant::now();
        if let Some(batch) = state.queue.form_batch(now, &policy) {
            state.free_executors -= 1;
            shared
                .counters
                .queue_depth
                .store(state.queue.len() as u64, Ordering::Relaxed);
            drop(state);
            shared.counters.batches.fetch_add(1, Ordering::Relaxed);
            shared
                .counters
                .batch_size_sum
                .fetch_add(batch.len() as u64, Ordering::Relaxed);
            if let Err(returned) = dispatch.send(batch) {
                // executors are gone; nothing can run it
                fail_batch(&shared, returned.into_inner(), EngineError::Shutdown);
            }
            state = shared.lock();
            continue;
        }
        state = match state.queue.ready_at(&policy) {
            Some(at) => {
                let timeout = at.saturating_duration_since(now);
                shared
                    .wake
                    .wait_timeout(state, timeout)
                    .unwrap_or_else(|p| p.into_inner())
                    .0
            }
            None => shared.wake.wait(state).unwrap_or_else(|p| p.into_inner()),
        };
    }
}

fn fail_batch<E: BatchExecutor>(shared: &Shared<E>, batch: Dispatched<E>, err: EngineError) {
    let counter = match err {
        EngineError::Shutdown => &shared.counters.shutdown,
        EngineError::Overload => &shared.counters.rejected,
        EngineError::Internal(_) => &shared.counters.internal,
    };
    counter.fetch_add(batch.len() as u64, Ordering::Relaxed);
    for queued in batch.requests {
        queued.item.complete(Err(err.clone()));
    }
}

fn run_executor<E: BatchExecutor>(shared: Arc<Shared<E>>, batches: Receiver<Dispatched<E>>) {
    while let Ok(batch) = batches.recv() {
        let formed_at = batch.formed_at;
        let size = batch.len();
        let mut inputs = Vec::with_capacity(size);
        let mut waiting = Vec::with_capacity(size);
        for queued in batch.requests {
            inputs.push(queued.item.payload);
            waiting.push((queued.enqueued_at, queued.item.reply));
        }

        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(|| shared.executor.execute(&inputs)));
        let execution = started.elapsed();
        let outputs = match result {
            Ok(Ok(outputs)) if outputs.len() == size => Ok(outputs),
            Ok(Ok(outputs)) => Err(format!(
                "executor returned {} outputs for {size} inputs",
                outputs.len()
            )),
            Ok(Err(msg)) => Err(msg),
            Err(panic) => Err(panic_message(&panic)),
        };

        match outputs {
            Ok(outputs) => {
                shared.counters.ok.fetch_add(size as u64, Ordering::Relaxed);
                for ((enqueued_at, reply), output) in waiting.into_iter().zip(outputs) {
                    let _ = reply.send(Ok(Completed {
                        output,
                        queue_wait: formed_at.saturating_duration_since(enqueued_at),
                        execution,
                        batch_size: size,
                    }));
                }
            }
            Err(msg) => {
                tracing::error!(batch_size = size, "batch execution failed: {msg}");
                shared
                    .counters
                    .internal
                    .fetch_add(size as u64, Ordering::Relaxed);
                for (_, reply) in waiting {
                    let _ = reply.send(Err(EngineError::Internal(msg.clone())));
                }
            }
        }

        shared.lock().free_executors += 1;
        shared.wake.notify_one();
    }
}

fn panic_message(panic: &Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = panic.downcast_ref::<&str>() {
        format!("executor panicked: {s}")
    } else if let Some(s) = panic.downcast_ref::<String>() {
        format!("executor panicked: {s}")
    } else {
        "executor panicked".to_string()
    }
}
