use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ActError, Connection, EpisodeResult, FailureReason, TerminationPolicy};
use crate::benchmark::{BenchError, Benchmark, TaskSpec};

/// One episode slot of a run: which task, its index within the task, and
/// the seed it is reset with.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Assignment {
    pub task_id: String,
    pub episode_index: u64,
    pub seed: u64,
}

impl Assignment {
    pub fn episode_id(&self) -> String {
        format!("{}#{}", self.task_id, self.episode_index)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RunnerOptions {
    pub termination: TerminationPolicy,
    pub step_timeout: Duration,
    pub connect_timeout: Duration,
}

impl Default for RunnerOptions {
    fn default() -> Self {
        RunnerOptions {
            termination: TerminationPolicy::RunToTruncation,
            step_timeout: Duration::from_secs(30),
            connect_timeout: Duration::from_secs(10),
        }
    }
}

struct Failure {
    reason: FailureReason,
    detail: String,
}

impl Failure {
    fn env(e: BenchError) -> Self {
        let reason = match e {
            // the benchmark rejected what the model sent
            BenchError::BadActionShape { .. } | BenchError::NonFiniteAction => FailureReason::ModelError,
            _ => FailureReason::EnvCrash,
        };
        Failure {
            reason,
            detail: e.to_string(),
        }
    }

    fn act(e: ActError) -> Self {
        let reason = match e {
            ActError::Timeout => FailureReason::Timeout,
            ActError::Model(_) => FailureReason::ModelError,
            ActError::Protocol(_) | ActError::Closed => FailureReason::ProtocolError,
        };
        Failure {
            reason,
            detail: e.to_string(),
        }
    }
}

#[derive(Default)]
struct Tally {
    steps: u64,
    obs: u64,
    transient: Option<u64>,
    success: bool,
}

fn episode_loop(
    bench: &mut dyn Benchmark,
    conn: &mut Connection,
    task: &TaskSpec,
    seed: u64,
    policy: TerminationPolicy,
    step_timeout: Duration,
    t: &mut Tally,
) -> Result<(), Failure> {
    let mut obs = bench.reset(&task.task_id, seed).map_err(Failure::env)?;
    loop {
        t.obs += 1;
        let action = conn.act(&obs, step_timeout).map_err(Failure::act)?;
        bench.step(&action).map_err(Failure::env)?;
        t.steps += 1;
        let r = bench.get_step_result().map_err(Failure::env)?;
        if r.success_event && t.transient.is_none() {
            t.transient = Some(t.steps);
        }
        let stop = match policy {
            TerminationPolicy::StopOnTerminated => r.terminated || r.truncated,
            TerminationPolicy::RunToTruncation => r.truncated,
        } || t.steps >= task.max_episode_steps;
        if stop {
            t.success = match policy {
                TerminationPolicy::StopOnTerminated => r.terminated && r.success_event,
                TerminationPolicy::RunToTruncation => r.success_event,
            };
            // the final observation is still sent so the server sees the
            // terminal state; its action is not executed
            t.obs += 1;
            conn.act(&r.obs, step_timeout).map_err(Failure::act)?;
            return Ok(());
        }
        obs = r.obs;
    }
}

/// Runs one episode end to end. Never fails: infrastructure problems come
/// back as a result with `failure_reason` set.
pub fn run_episode(
    bench: &mut dyn Benchmark,
    conn: &mut Connection,
    task: &TaskSpec,
    episode_id: &str,
    seed: u64,
    policy: TerminationPolicy,
    step_timeout: Duration,
) -> EpisodeResult {
    let start = Instant::now();
    let mut t = Tally::default();
    let mut outcome = conn
        .episode_start(episode_id, &task.task_id, seed)
        .map_err(Failure::act)
        .and_then(|_| episode_loop(bench, conn, task, seed, policy, step_timeout, &mut t));
    if outcome.is_ok() {
        outcome = conn
            .episode_end(episode_id, t.success, t.steps)
            .map_err(Failure::act);
    }
    let (failure_reason, failure_detail) = match outcome {
        Ok(()) => (None, None),
        Err(f) => (Some(f.reason), Some(f.detail)),
    };
    EpisodeResult {
        episode_id: episode_id.to_owned(),
        task_id: task.task_id.clone(),
        seed,
        final_success: t.success && failure_reason.is_none(),
        transient_success_step: t.transient,
        steps_executed: t.steps,
        failure_reason,
        failure_detail,
        wall_time_s: start.elapsed().as_secs_f64(),
        obs_count: t.obs,
        chain_progress: bench.chained_subtask_progress(),
    }
}

/// A lazily (re)established connection to one model server.
pub struct Link {
    endpoint: String,
    connect_timeout: Duration,
    conn: Option<Connection>,
}

impl Link {
    pub fn new(endpoint: &str, connect_timeout: Duration) -> Self {
        Link {
            endpoint: endpoint.to_owned(),
            connect_timeout,
            conn: None,
        }
    }

    pub fn with_connection(conn: Connection, connect_timeout: Duration) -> Self {
        Link {
            endpoint: conn.endpoint().to_owned(),
            connect_timeout,
            conn: Some(conn),
        }
    }

    pub fn get(&mut self) -> Result<&mut Connection, String> {
        if self.conn.is_none() {
            let c = Connection::connect(&self.endpoint, self.connect_timeout).map_err(|e| e.to_string())?;
            self.conn = Some(c);
        }
        Ok(self.conn.as_mut().expect("connection present"))
    }

    /// Drops the current connection; the next `get` reconnects.
    pub fn reset(&mut self) {
        if let Some(c) = self.conn.take() {
            c.close();
        }
    }
}

/// Runs `assignments` in order on one benchmark instance, replacing the
/// instance after every failed episode and the connection after every
/// transport-level failure. Each result is passed to `sink` as soon as it
/// exists. Always yields one result per assignment.
pub fn run_assignments(
    factory: &dyn Fn() -> Box<dyn Benchmark>,
    link: &mut Link,
    assignments: &[Assignment],
    opts: &RunnerOptions,
    sink: &mut dyn FnMut(&EpisodeResult),
) -> Vec<EpisodeResult> {
    let mut out = Vec::with_capacity(assignments.len());
    let mut bench: Option<Box<dyn Benchmark>> = None;
    let mut fatal: Option<String> = None;
    for a in assignments {
        let r = match &fatal {
            Some(why) => EpisodeResult::not_run(a, FailureReason::ProtocolError, why.as_str()),
            None => match link.get() {
                Err(why) => {
                    let why = format!("model server connection lost: {why}");
                    log::error!("{why}; remaining episodes recorded as protocol_error");
                    let r = EpisodeResult::not_run(a, FailureReason::ProtocolError, why.as_str());
                    fatal = Some(why);
                    r
                }
                Ok(conn) => {
                    let b = bench.get_or_insert_with(|| factory());
                    match b.tasks().iter().find(|t| t.task_id == a.task_id).cloned() {
                        None => EpisodeResult::not_run(a, FailureReason::EnvCrash, format!("unknown task {:?}", a.task_id)),
                        Some(task) => run_episode(
                            b.as_mut(),
                            conn,
                            &task,
                            &a.episode_id(),
                            a.seed,
                            opts.termination,
                            opts.step_timeout,
                        ),
                    }
                }
            },
        };
        if let Some(reason) = r.failure_reason {
            bench = None;
            if matches!(reason, FailureReason::Timeout | FailureReason::ProtocolError) {
                link.reset();
            }
        }
        sink(&r);
        out.push(r);
    }
    out
}

/// Runs `episodes` episodes of one task with seeds `base_seed + i`.
pub fn run_task(
    factory: &dyn Fn() -> Box<dyn Benchmark>,
    link: &mut Link,
    task: &TaskSpec,
    episodes: u64,
    base_seed: u64,
    opts: &RunnerOptions,
) -> Vec<EpisodeResult> {
    let assignments: Vec<Assignment> = (0..episodes)
        .map(|i| Assignment {
            task_id: task.task_id.clone(),
            episode_index: i,
            seed: base_seed + i,
        })
        .collect();
    run_assignments(factory, link, &assignments, opts, &mut |_| {})
}
