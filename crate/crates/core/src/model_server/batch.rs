use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::policy::{ModelFailure, Policy, PredictInput};
use super::{ActionChunk, ObservationPayload, PredictContext};

struct QueueState<T> {
    pending: VecDeque<T>,
    closed: bool,
}

/// The cross-connection rendezvous: handlers submit, one collector drains
/// in batches.
pub struct BatchQueue<T> {
    state: Mutex<QueueState<T>>,
    ready: Condvar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("batch queue is shut down")]
pub struct QueueClosed;

impl<T> Default for BatchQueue<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T> BatchQueue<T> {
    pub fn new() -> Self {
        BatchQueue {
            state: Mutex::new(QueueState {
                pending: VecDeque::new(),
                closed: false,
            }),
            ready: Condvar::new(),
        }
    }

    pub fn submit(&self, item: T) -> Result<(), QueueClosed> {
        let mut st = self.state.lock().unwrap();
        if st.closed {
            return Err(QueueClosed);
        }
        st.pending.push_back(item);
        self.ready.notify_all();
        Ok(())
    }

    pub fn pending_len(&self) -> usize {
        self.state.lock().unwrap().pending.len()
    }

    /// Stops accepting new items. Items already queued are still handed out.
    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.ready.notify_all();
    }

    /// Closes the queue and drops everything still pending.
    pub fn close_and_discard(&self) -> usize {
        let mut st = self.state.lock().unwrap();
        st.closed = true;
        let n = st.pending.len();
        st.pending.clear();
        self.ready.notify_all();
        n
    }

    /// Blocks until at least one item is pending, then waits up to
    /// `max_wait` for the batch to fill. Returns early only when
    /// `max_batch_size` items are available. `None` once the queue is closed
    /// and drained.
    pub fn collect_batch(&self, max_batch_size: usize, max_wait: Duration) -> Option<Vec<T>> {
        let max_batch_size = max_batch_size.max(1);
        let mut st = self.state.lock().unwrap();
        while st.pending.is_empty() {
            if st.closed {
                return None;
            }
            st = self.ready.wait(st).unwrap();
        }
        let deadline = Instant::now() + max_wait;
        while st.pending.len() < max_batch_size && !st.closed {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            st = self.ready.wait_timeout(st, deadline - now).unwrap().0;
        }
        let n = st.pending.len().min(max_batch_size);
        Some(st.pending.drain(..n).collect())
    }
}

/// Evaluates a batch; element `i` of the result answers `batch[i]`.
pub fn predict_batch(policy: &dyn Policy, batch: &[PredictInput]) -> Vec<Result<ActionChunk, ModelFailure>> {
    policy.predict_batch(batch)
}

pub type Reply = Result<ActionChunk, ModelFailure>;

pub struct PredictRequest {
    pub obs: ObservationPayload,
    pub ctx: PredictContext,
    pub reply: mpsc::Sender<Reply>,
}

#[derive(Debug, Default)]
pub struct EngineStats {
    completed: AtomicU64,
    batches: AtomicU64,
}

impl EngineStats {
    /// Predictions finished so far (counted at batch completion).
    pub fn completed(&self) -> u64 {
        self.completed.load(Ordering::Relaxed)
    }

    pub fn batches(&self) -> u64 {
        self.batches.load(Ordering::Relaxed)
    }
}

/// A batch queue plus the single inference thread draining it.
pub struct InferenceEngine {
    queue: Arc<BatchQueue<PredictRequest>>,
    stats: Arc<EngineStats>,
    worker: Mutex<Option<JoinHandle<()>>>,
}

impl InferenceEngine {
    pub fn start(policy: Arc<dyn Policy>, max_batch_size: usize, max_wait: Duration) -> Self {
        let queue = Arc::new(BatchQueue::new());
        let stats = Arc::new(EngineStats::default());
        let worker = {
            let queue = Arc::clone(&queue);
            let stats = Arc::clone(&stats);
            std::thread::Builder::new()
                .name("inference".into())
                .spawn(move || inference_loop(&*policy, &queue, &stats, max_batch_size, max_wait))
                .expect("spawn inference thread")
        };
        InferenceEngine {
            queue,
            stats,
            worker: Mutex::new(Some(worker)),
        }
    }

    /// Queues one prediction; the answer arrives on the returned receiver.
    pub fn submit(&self, obs: ObservationPayload, ctx: PredictContext) -> Result<mpsc::Receiver<Reply>, QueueClosed> {
        let (tx, rx) = mpsc::channel();
        self.queue.submit(PredictRequest { obs, ctx, reply: tx })?;
        Ok(rx)
    }

    pub fn predict_blocking(&self, obs: ObservationPayload, ctx: PredictContext) -> Reply {
        let rx = self
            .submit(obs, ctx)
            .map_err(|e| ModelFailure(e.to_string()))?;
        rx.recv()
            .unwrap_or_else(|_| Err(ModelFailure("inference thread exited".into())))
    }

    pub fn pending_len(&self) -> usize {
        self.queue.pending_len()
    }

    pub fn stats(&self) -> &Arc<EngineStats> {
        &self.stats
    }

    /// Closes the queue, lets the inference thread finish what is queued,
    /// and joins it.
    pub fn shutdown(&self) {
        self.queue.close();
        if let Some(h) = self.worker.lock().unwrap().take() {
            let _ = h.join();
        }
    }
}

impl InferenceEngine {
    /// Like `shutdown`, but drops queued requests instead of serving them.
    /// Their requesters see a closed reply channel.
    pub fn abort(&self) -> usize {
        let dropped = self.queue.close_and_discard();
        if let Some(h) = self.worker.lock().unwrap().take() {
            let _ = h.join();
        }
        dropped
    }
}

impl Drop for InferenceEngine {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn inference_loop(
    policy: &dyn Policy,
    queue: &BatchQueue<PredictRequest>,
    stats: &EngineStats,
    max_batch_size: usize,
    max_wait: Duration,
) {
    while let Some(batch) = queue.collect_batch(max_batch_size, max_wait) {
        let (inputs, replies): (Vec<PredictInput>, Vec<_>) =
            batch.into_iter().map(|r| ((r.obs, r.ctx), r.reply)).unzip();
        let results = predict_batch(policy, &inputs);
        stats.completed.fetch_add(results.len() as u64, Ordering::Relaxed);
        stats.batches.fetch_add(1, Ordering::Relaxed);
        for (reply, result) in replies.into_iter().zip(results) {
            // the requester may have given up (timeout, closed connection)
            let _ = reply.send(result);
        }
    }
}
