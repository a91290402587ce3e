use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmark::BenchmarkConfig;
use crate::model_server::{serve, InferenceEngine, ModelServerConfig, ObservationPayload, Policy, PolicyConfig, PredictContext};
use crate::runner::Connection;

const CONNECT_TIMEOUT: Duration = Duration::from_secs(10);
const ACT_TIMEOUT: Duration = Duration::from_secs(30);

/// Rates that were measured, plus the sample points that could not be.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Measured {
    pub samples: BTreeMap<u64, f64>,
    pub failures: Vec<(u64, String)>,
}

fn local_server(mut cfg: ModelServerConfig) -> ModelServerConfig {
    cfg.host = "127.0.0.1".into();
    cfg.port = 0;
    cfg
}

/// Runs `clients` connected workers in lock step: each connects, all start
/// together, and `work` runs on every connection until it returns.
fn with_clients<R: Send>(
    endpoint: &str,
    clients: usize,
    work: impl Fn(usize, &mut Connection) -> Result<R, String> + Sync,
    during: impl FnOnce(),
) -> Result<Vec<R>, String> {
    let gate = Barrier::new(clients + 1);
    thread::scope(|s| {
        let handles: Vec<_> = (0..clients)
            .map(|i| {
                let gate = &gate;
                let work = &work;
                s.spawn(move || {
                    let conn = Connection::connect(endpoint, CONNECT_TIMEOUT).map_err(|e| e.to_string());
                    gate.wait();
                    let mut conn = conn?;
                    let out = work(i, &mut conn);
                    conn.close();
                    out
                })
            })
            .collect();
        gate.wait();
        during();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| "client thread panicked".to_string())?)
            .collect()
    })
}

fn lambda_once(bench: &BenchmarkConfig, endpoint: &str, n: usize, duration: Duration) -> Result<f64, String> {
    let counts = with_clients(
        endpoint,
        n,
        |i, conn| {
            let deadline = Instant::now() + duration;
            let mut env = bench.build();
            let mut count = 0u64;
            let mut episode = 0u64;
            'run: loop {
                let task = &bench.tasks[(episode % bench.tasks.len() as u64) as usize];
                let seed = bench.base_seed + episode * n as u64 + i as u64;
                let id = format!("lambda-{i}-{episode}");
                conn.episode_start(&id, &task.task_id, seed).map_err(|e| e.to_string())?;
                let mut obs = env.reset(&task.task_id, seed).map_err(|e| e.to_string())?;
                loop {
                    let action = conn.act(&obs, ACT_TIMEOUT).map_err(|e| e.to_string())?;
                    if Instant::now() >= deadline {
                        break 'run;
                    }
                    count += 1;
                    env.step(&action).map_err(|e| e.to_string())?;
                    let r = env.get_step_result().map_err(|e| e.to_string())?;
                    if r.terminated || r.truncated {
                        break;
                    }
                    obs = r.obs;
                }
                episode += 1;
            }
            Ok(count)
        },
        || {},
    )?;
    Ok(counts.iter().sum::<u64>() as f64 / duration.as_secs_f64())
}

/// Environment demand λ(N): N workers step the benchmark against a
/// zero-latency echo server for `duration`; an observation counts when its
/// action arrives.
pub fn measure_lambda(bench: &BenchmarkConfig, ns: &[usize], duration: Duration) -> Measured {
    let mut out = Measured::default();
    let cfg = local_server(ModelServerConfig {
        policy: PolicyConfig::Echo {
            action_dim: bench.params.action_dim,
        },
        ..Default::default()
    });
    let server = match serve(&cfg) {
        Ok(s) => s,
        Err(e) => {
            out.failures = ns.iter().map(|&n| (n as u64, e.to_string())).collect();
            return out;
        }
    };
    for &n in ns {
        if n == 0 {
            out.failures.push((0, "shard count must be positive".into()));
            continue;
        }
        match lambda_once(bench, &server.endpoint(), n, duration) {
            Ok(rate) if rate > 0.0 => {
                log::info!("λ({n}) = {rate:.1} obs/s");
                out.samples.insert(n as u64, rate);
            }
            Ok(_) => out.failures.push((n as u64, "no observations completed".into())),
            Err(e) => out.failures.push((n as u64, e)),
        }
    }
    out
}

fn probe_observation() -> ObservationPayload {
    ObservationPayload {
        states: vec![0.0; 7],
        task_description: "throughput probe".into(),
        ..Default::default()
    }
}

fn mu_once(server: &ModelServerConfig, b: usize, duration: Duration) -> Result<f64, String> {
    let mut cfg = local_server(server.clone());
    cfg.max_batch_size = b;
    cfg.replan_interval = 1;
    let handle = serve(&cfg).map_err(|e| e.to_string())?;
    let stop = AtomicBool::new(false);
    let obs = probe_observation();
    let stats = Arc::clone(handle.engine().stats());
    let mut window = (0u64, Duration::ZERO);
    with_clients(
        &handle.endpoint(),
        2 * b,
        |i, conn| {
            conn.episode_start(&format!("mu-{i}"), "probe", i as u64)
                .map_err(|e| e.to_string())?;
            while !stop.load(Ordering::Relaxed) {
                conn.act(&obs, ACT_TIMEOUT).map_err(|e| e.to_string())?;
            }
            Ok(())
        },
        || {
            thread::sleep((duration / 10).min(Duration::from_millis(500)));
            let c0 = stats.completed();
            let t0 = Instant::now();
            thread::sleep(duration);
            window = (stats.completed() - c0, t0.elapsed());
            stop.store(true, Ordering::Relaxed);
        },
    )?;
    let (completed, elapsed) = window;
    Ok(completed as f64 / elapsed.as_secs_f64())
}

/// Model supply μ(B): for each B, a server with `max_batch_size = B` (and
/// predict on every step) is saturated by 2B closed-loop connections; an
/// observation counts when its batch completes.
pub fn measure_mu(server: &ModelServerConfig, bs: &[usize], duration: Duration) -> Measured {
    let mut out = Measured::default();
    for &b in bs {
        if b == 0 {
            out.failures.push((0, "batch size must be positive".into()));
            continue;
        }
        match mu_once(server, b, duration) {
            Ok(rate) if rate > 0.0 => {
                log::info!("μ({b}) = {rate:.1} obs/s");
                out.samples.insert(b as u64, rate);
            }
            Ok(_) => out.failures.push((b as u64, "no predictions completed".into())),
            Err(e) => out.failures.push((b as u64, e)),
        }
    }
    out
}

/// Pending-queue lengths sampled while an open-loop load ran.
#[derive(Debug, Clone, PartialEq)]
pub struct QueueTrace {
    pub samples: Vec<usize>,
    pub p95: usize,
    pub max: usize,
    /// Queue length when the window closed.
    pub final_len: usize,
    pub submitted: u64,
    pub completed: u64,
}

fn percentile(sorted: &[usize], q: f64) -> usize {
    if sorted.is_empty() {
        return 0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Feeds Poisson arrivals at `arrival_rate` per second straight into a
/// batching engine for `duration`, sampling its pending-queue length every
/// `sample_every`.
pub fn probe_queue(
    policy: Arc<dyn Policy>,
    max_batch_size: usize,
    max_wait: Duration,
    arrival_rate: f64,
    duration: Duration,
    sample_every: Duration,
    seed: u64,
) -> QueueTrace {
    let engine = InferenceEngine::start(policy, max_batch_size, max_wait);
    let obs = probe_observation();
    let start = Instant::now();
    let end = start + duration;
    let (samples, submitted) = thread::scope(|s| {
        let arrivals = s.spawn(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut next = Duration::ZERO;
            let mut submitted = 0u64;
            loop {
                let gap = -(1.0 - rng.random::<f64>()).ln() / arrival_rate;
                next += Duration::from_secs_f64(gap);
                if next >= duration {
                    return submitted;
                }
                let due = start + next;
                let now = Instant::now();
                if due > now {
                    thread::sleep(due - now);
                }
                let ctx = PredictContext {
                    episode_id: format!("arrival-{submitted}"),
                    ..Default::default()
                };
                if engine.submit(obs.clone(), ctx).is_err() {
                    return submitted;
                }
                submitted += 1;
            }
        });
        let mut samples = Vec::new();
        let mut tick = start;
        loop {
            tick += sample_every;
            if tick > end {
                break;
            }
            let now = Instant::now();
            if tick > now {
                thread::sleep(tick - now);
            }
            samples.push(engine.pending_len());
        }
        (samples, arrivals.join().expect("arrival thread"))
    });
    let final_len = engine.pending_len();
    let completed = engine.stats().completed();
    engine.abort();
    let mut sorted = samples.clone();
    sorted.sort_unstable();
    QueueTrace {
        p95: percentile(&sorted, 0.95),
        max: sorted.last().copied().unwrap_or(0),
        samples,
        final_len,
        submitted,
        completed,
    }
}
