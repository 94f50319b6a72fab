use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use clinserve_core::batching::{BatchExecutor, BatchPolicy, Completion, Engine, EngineError};
use clinserve_core::batching::EngineConfig;
use clinserve_core::model::{infer_batch, CostModel, Lexicon, ModelDescriptor};
use clinserve_core::phi::{normalize, NormalizedInput};
use rand::{rngs::StdRng, Rng, SeedableRng};

struct Sleep {
    per_batch: Duration,
    calls: AtomicUsize,
}

impl BatchExecutor for Sleep {
    type Input = (u64, Instant);
    type Output = (u64, Instant);

    fn execute(&self, inputs: &[Self::Input]) -> Result<Vec<Self::Output>, String> {
        let n = self.calls.fetch_add(1, Ordering::Relaxed);
        let dispatched = Instant::now();
        thread::sleep(self.per_batch);
        if n % 97 == 13 {
            panic!("injected fault");
        }
        Ok(inputs.iter().map(|&(id, _)| (id, dispatched)).collect())
    }
}

fn engine(policy: BatchPolicy, executors: usize, per_batch: Duration) -> Arc<Engine<Sleep>> {
    Arc::new(Engine::start(
        EngineConfig { policy, executors },
        Sleep { per_batch, calls: AtomicUsize::new(0) },
    ))
}

#[test]
fn every_request_completes_exactly_once_under_random_shutdown() {
    for seed in 0..20 {
        let mut rng = StdRng::seed_from_u64(seed);
        let policy = BatchPolicy::new(rng.random_range(1..=16), rng.random_range(0.0..3.0), 64).unwrap();
        let eng = engine(policy, rng.random_range(1..=3), Duration::from_micros(rng.random_range(0..300)));
        let total = 500;
        let stop_after = rng.random_range(0..total);
        let producers = 4;
        let mut handles = Vec::new();
        for p in 0..producers {
            let eng = eng.clone();
            handles.push(thread::spawn(move || {
                let tickets: Vec<_> = (0..total / producers)
                    .map(|i| eng.submit(((p * 1000 + i) as u64, Instant::now())))
                    .collect();
                tickets
                    .into_iter()
                    .map(|t| t.blocking_recv().expect("reply dropped"))
                    .collect::<Vec<Completion<_>>>()
            }));
        }
        while (eng.stats().submitted as usize) < stop_after {
            thread::yield_now();
        }
        eng.shutdown();
        let results: Vec<_> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        assert_eq!(results.len(), total);
        let stats = eng.stats();
        assert_eq!(stats.submitted as usize, total);
        assert_eq!(stats.completed(), stats.submitted);
        let ok = results.iter().filter(|r| r.is_ok()).count() as u64;
        assert_eq!(ok, stats.ok);
        for r in &results {
            if let Ok(c) = r {
                assert!(c.batch_size >= 1 && c.batch_size <= policy.max_batch_size);
            }
        }
    }
}

#[test]
fn wait_is_bounded_by_window_when_an_executor_is_free() {
    let policy = BatchPolicy::new(16, 5.0, 1024).unwrap();
    let eng = engine(policy, 2, Duration::ZERO);
    let mut worst = Duration::ZERO;
    for _ in 0..60 {
        let t = eng.submit((0, Instant::now()));
        let done = t.blocking_recv().unwrap();
        if let Ok(c) = done {
            worst = worst.max(c.queue_wait);
        }
        thread::sleep(Duration::from_millis(2));
    }
    // one scheduler tick of slack, plus generous room for an oversubscribed CI box
    assert!(worst <= Duration::from_millis(5 + 1 + 4), "worst wait {worst:?}");
    assert!(worst >= Duration::from_millis(5), "window was not honoured: {worst:?}");
}

#[test]
fn batches_keep_fifo_order_within_a_batch() {
    let policy = BatchPolicy::new(8, 20.0, 1024).unwrap();
    let eng = engine(policy, 1, Duration::ZERO);
    let tickets: Vec<_> = (0..8u64).map(|i| eng.submit((i, Instant::now()))).collect();
    let outs: Vec<_> = tickets.into_iter().map(|t| t.blocking_recv().unwrap().unwrap()).collect();
    assert!(outs.iter().all(|c| c.batch_size == 8));
    let ids: Vec<u64> = outs.iter().map(|c| c.output.0).collect();
    assert_eq!(ids, (0..8).collect::<Vec<_>>());
}

struct Direct(ModelDescriptor);

impl BatchExecutor for Direct {
    type Input = NormalizedInput;
    type Output = clinserve_core::SentimentOutput;

    fn execute(&self, inputs: &[NormalizedInput]) -> Result<Vec<Self::Output>, String> {
        infer_batch(&self.0, inputs).map_err(|e| e.to_string())
    }
}

fn lexicon_model(cost: CostModel) -> ModelDescriptor {
    let lex = Lexicon::parse("good\t1\nbad\t-1\ngreat\t2\nawful\t-3\n").unwrap();
    ModelDescriptor::in_memory("sentiment", 1, lex, cost)
}

#[test]
fn batching_never_changes_per_item_results() {
    let model = lexicon_model(CostModel::FREE);
    let words = ["good", "bad", "great", "awful", "the", "patient", "is"];
    let mut rng = StdRng::seed_from_u64(99);
    let texts: Vec<String> = (0..200)
        .map(|_| {
            (0..rng.random_range(0..12))
                .map(|_| words[rng.random_range(0..words.len())])
                .collect::<Vec<_>>()
                .join(" ")
        })
        .collect();
    let inputs: Vec<_> = texts.iter().map(|t| normalize(t, 128)).collect();
    let singles: Vec<_> = inputs.iter().map(|i| model.score(i)).collect();
    for b in [1usize, 3, 7, 16] {
        let grouped: Vec<_> = inputs
            .chunks(b)
            .flat_map(|chunk| infer_batch(&model, chunk).unwrap())
            .collect();
        assert_eq!(grouped, singles, "batch size {b}");
    }
    let eng = Engine::start(
        EngineConfig { policy: BatchPolicy::new(16, 2.0, 1024).unwrap(), executors: 2 },
        Direct(model.clone()),
    );
    let tickets: Vec<_> = inputs.iter().cloned().map(|i| eng.submit(i)).collect();
    let through_engine: Vec<_> = tickets
        .into_iter()
        .map(|t| t.blocking_recv().unwrap().unwrap().output)
        .collect();
    assert_eq!(through_engine, singles);
}

#[test]
fn cost_is_monotone_in_batch_size() {
    let model = lexicon_model(CostModel::GPU_LIKE);
    let input = normalize("good", 128);
    let mut prev = Duration::ZERO;
    for b in [1usize, 4, 8, 16] {
        let batch = vec![input.clone(); b];
        let start = Instant::now();
        infer_batch(&model, &batch).unwrap();
        let took = start.elapsed();
        assert!(took + Duration::from_millis(2) >= prev, "b={b}: {took:?} < {prev:?}");
        let expected = CostModel::GPU_LIKE.service_time(b);
        assert!(took >= expected);
        prev = took;
    }
}

fn p50(mut v: Vec<Duration>) -> Duration {
    v.sort();
    v[(v.len() + 1) / 2 - 1]
}

#[test]
fn pass_through_matches_direct_execution() {
    let cost = CostModel::new(3.0, 0.0).unwrap();
    let model = lexicon_model(cost);
    let input = normalize("good day", 128);
    let direct: Vec<Duration> = (0..40)
        .map(|_| {
            let s = Instant::now();
            infer_batch(&model, std::slice::from_ref(&input)).unwrap();
            s.elapsed()
        })
        .collect();
    let eng = Engine::start(
        EngineConfig { policy: BatchPolicy::pass_through(1024), executors: 1 },
        Direct(model),
    );
    let batched: Vec<Duration> = (0..40)
        .map(|_| {
            let s = Instant::now();
            eng.submit(input.clone()).blocking_recv().unwrap().unwrap();
            s.elapsed()
        })
        .collect();
    let (a, b) = (p50(direct), p50(batched));
    let diff = if a > b { a - b } else { b - a };
    assert!(diff <= Duration::from_millis(2), "direct {a:?} vs engine {b:?}");
}

#[test]
fn overload_is_reported_not_dropped() {
    let policy = BatchPolicy::new(1, 0.0, 2).unwrap();
    let eng = engine(policy, 1, Duration::from_millis(20));
    let tickets: Vec<_> = (0..10u64).map(|i| eng.submit((i, Instant::now()))).collect();
    let results: Vec<_> = tickets.into_iter().map(|t| t.blocking_recv().unwrap()).collect();
    let overloaded = results
        .iter()
        .filter(|r| matches!(r, Err(EngineError::Overload)))
        .count();
    assert!(overloaded >= 6, "{overloaded}");
    assert_eq!(eng.stats().completed(), 10);
}
