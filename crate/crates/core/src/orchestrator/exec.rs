use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::time::Instant;

use super::{plan_shards, ShardPlan};
use crate::config::{parse_eval_config, read_episodes, EvalConfig};
use crate::par;
use crate::runner::{run_assignments, Assignment, EpisodeResult, FailureReason, Link};

/// How shards are executed.
#[derive(Debug, Clone)]
pub enum Executor {
    /// One shard after another on the calling thread.
    Sequential,
    /// One thread per shard inside this process.
    InProcess,
    /// One worker process per shard, optionally wrapped in a container
    /// command prefix such as `["docker", "run", "--rm", "img"]`.
    Process {
        worker_bin: PathBuf,
        container_cmd: Vec<String>,
        /// Where per-shard configs and result streams go. A fresh
        /// temporary directory when absent.
        work_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone)]
pub struct ShardedRun {
    /// One result per planned episode, in global order.
    pub results: Vec<EpisodeResult>,
    pub wall_time_s: f64,
    /// Shards whose worker failed to start or exited abnormally.
    pub shard_errors: Vec<(usize, String)>,
}

impl ShardedRun {
    pub fn total_obs(&self) -> u64 {
        self.results.iter().map(|r| r.obs_count).sum()
    }
}

fn run_shard_here(cfg: &EvalConfig, endpoint: &str, assignments: &[Assignment]) -> Vec<EpisodeResult> {
    let opts = cfg.runner_options();
    let bench_cfg = cfg.benchmark.clone();
    let factory = move || bench_cfg.build();
    let mut link = Link::new(endpoint, opts.connect_timeout);
    run_assignments(&factory, &mut link, assignments, &opts, &mut |_| {})
}

/// Runs every shard of `plan` against the server at `endpoint` and collects
/// exactly one result per planned episode.
pub fn run_sharded(plan: &ShardPlan, cfg: &EvalConfig, endpoint: &str, executor: &Executor) -> ShardedRun {
    let start = Instant::now();
    let (per_shard, shard_errors): (Vec<Vec<EpisodeResult>>, Vec<(usize, String)>) = match executor {
        Executor::Sequential => (
            plan.assignments
                .iter()
                .map(|a| run_shard_here(cfg, endpoint, a))
                .collect(),
            Vec::new(),
        ),
        Executor::InProcess => (
            par::run_blocking(plan.assignments.clone(), |a| run_shard_here(cfg, endpoint, &a)),
            Vec::new(),
        ),
        Executor::Process {
            worker_bin,
            container_cmd,
            work_dir,
        } => run_processes(plan, cfg, endpoint, worker_bin, container_cmd, work_dir.as_deref()),
    };
    let mut results: Vec<EpisodeResult> = per_shard.into_iter().flatten().collect();
    results.sort_by_key(|r| r.seed);
    ShardedRun {
        results,
        wall_time_s: start.elapsed().as_secs_f64(),
        shard_errors,
    }
}

fn scratch_dir() -> io::Result<PathBuf> {
    let nanos = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_nanos())
        .unwrap_or(0);
    let dir = std::env::temp_dir().join(format!("vla-eval-shards-{}-{nanos}", std::process::id()));
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn describe(status: io::Result<ExitStatus>) -> Option<String> {
    match status {
        Ok(s) if s.success() => None,
        Ok(s) => Some(format!("worker exited with {s}")),
        Err(e) => Some(format!("cannot wait for worker: {e}")),
    }
}

fn run_processes(
    plan: &ShardPlan,
    cfg: &EvalConfig,
    endpoint: &str,
    worker_bin: &Path,
    container_cmd: &[String],
    work_dir: Option<&Path>,
) -> (Vec<Vec<EpisodeResult>>, Vec<(usize, String)>) {
    let crash_all = |why: String| -> (Vec<Vec<EpisodeResult>>, Vec<(usize, String)>) {
        let results = plan
            .assignments
            .iter()
            .map(|shard| {
                shard
                    .iter()
                    .map(|a| EpisodeResult::not_run(a, FailureReason::EnvCrash, why.as_str()))
                    .collect()
            })
            .collect();
        let errors = (0..plan.shard_count).map(|i| (i, why.clone())).collect();
        (results, errors)
    };
    let dir = match work_dir {
        Some(d) => fs::create_dir_all(d).map(|_| d.to_path_buf()),
        None => scratch_dir(),
    };
    let dir = match dir {
        Ok(d) => d,
        Err(e) => return crash_all(format!("cannot create shard work directory: {e}")),
    };

    let mut worker_cfg = cfg.clone();
    worker_cfg.run.shards = plan.shard_count;
    worker_cfg.run.server_endpoint = endpoint.to_owned();
    worker_cfg.provenance.config_hash.clear();
    let cfg_path = dir.join("eval_config.yaml");
    if let Err(e) = fs::write(&cfg_path, worker_cfg.to_yaml()) {
        return crash_all(format!("cannot write worker config: {e}"));
    }

    let mut children: Vec<(PathBuf, Result<Child, String>)> = Vec::with_capacity(plan.shard_count);
    for i in 0..plan.shard_count {
        let out = dir.join(format!("shard-{i:04}.jsonl"));
        let _ = fs::remove_file(&out);
        let mut cmd = match container_cmd.split_first() {
            Some((prog, rest)) => {
                let mut c = Command::new(prog);
                c.args(rest).arg(worker_bin);
                c
            }
            None => Command::new(worker_bin),
        };
        cmd.arg("--bench-config")
            .arg(&cfg_path)
            .arg("--shard")
            .arg(i.to_string())
            .arg("--endpoint")
            .arg(endpoint)
            .arg("--out")
            .arg(&out)
            .stdin(Stdio::null())
            .stdout(Stdio::null());
        let child = cmd.spawn().map_err(|e| format!("cannot spawn worker {}: {e}", worker_bin.display()));
        children.push((out, child));
    }

    let mut results = Vec::with_capacity(plan.shard_count);
    let mut errors = Vec::new();
    for (i, (out, child)) in children.into_iter().enumerate() {
        let problem = match child {
            Ok(mut c) => describe(c.wait()),
            Err(e) => Some(e),
        };
        let mut reported: HashMap<String, EpisodeResult> = read_episodes(&out)
            .unwrap_or_default()
            .into_iter()
            .map(|r| (r.episode_id.clone(), r))
            .collect();
        let why = problem.clone().unwrap_or_else(|| "worker exited without reporting the episode".into());
        let shard: Vec<EpisodeResult> = plan.assignments[i]
            .iter()
            .map(|a| {
                reported
                    .remove(&a.episode_id())
                    .unwrap_or_else(|| EpisodeResult::not_run(a, FailureReason::EnvCrash, why.as_str()))
            })
            .collect();
        if let Some(p) = problem {
            log::warn!("shard {i}: {p}");
            errors.push((i, p));
        }
        results.push(shard);
    }
    if work_dir.is_none() {
        let _ = fs::remove_dir_all(&dir);
    }
    (results, errors)
}

/// Command-line contract of a shard worker process.
#[derive(Debug, Clone)]
pub struct WorkerArgs {
    pub bench_config: PathBuf,
    pub shard: usize,
    pub endpoint: Option<String>,
    pub out: PathBuf,
}

/// Body of a worker process: plans from the config's `run.shards`, runs its
/// own shard, and appends one JSON line per finished episode to `out`.
pub fn run_worker(args: &WorkerArgs) -> Result<usize, String> {
    let cfg = parse_eval_config(&args.bench_config).map_err(|e| e.to_string())?;
    if args.shard >= cfg.run.shards {
        return Err(format!("shard {} out of range for {} shard(s)", args.shard, cfg.run.shards));
    }
    let endpoint = args.endpoint.clone().unwrap_or_else(|| cfg.run.server_endpoint.clone());
    let plan = plan_shards(
        &cfg.benchmark.tasks,
        cfg.benchmark.episodes_per_task,
        cfg.benchmark.base_seed,
        cfg.run.shards,
    );
    let mine = &plan.assignments[args.shard];
    let file = fs::File::create(&args.out).map_err(|e| format!("cannot create {}: {e}", args.out.display()))?;
    let mut out = io::BufWriter::new(file);
    let mut write_err: Option<io::Error> = None;
    let opts = cfg.runner_options();
    let bench_cfg = cfg.benchmark.clone();
    let factory = move || bench_cfg.build();
    let mut link = Link::new(&endpoint, opts.connect_timeout);
    let results = run_assignments(&factory, &mut link, mine, &opts, &mut |r| {
        let line = serde_json::to_string(r).expect("episode result serializes");
        if let Err(e) = writeln!(out, "{line}").and_then(|_| out.flush()) {
            write_err.get_or_insert(e);
        }
    });
    match write_err {
        Some(e) => Err(format!("cannot write results: {e}")),
        None => Ok(results.len()),
    }
}
