#![allow(dead_code)]

use std::sync::{Mutex, MutexGuard};
use std::time::Duration;

use vla_eval::benchmark::{BenchmarkConfig, BenchmarkKind, TaskSpec};
use vla_eval::config::{EvalConfig, RunSection};
use vla_eval::model_server::{serve, ModelServerConfig, PolicyConfig, ServerHandle};
use vla_eval::runner::{run_task, EpisodeResult, Link, RunnerOptions, TerminationPolicy};

static TIMING: Mutex<()> = Mutex::new(());

/// Serializes tests whose assertions depend on wall-clock rates.
pub fn timing_lock() -> MutexGuard<'static, ()> {
    TIMING.lock().unwrap_or_else(|e| e.into_inner())
}

pub fn tasks(n: usize, max_steps: u64) -> Vec<TaskSpec> {
    (0..n).map(|i| TaskSpec::new(&format!("task_{i}"), max_steps)).collect()
}

pub fn bench(kind: BenchmarkKind, ntasks: usize, eps: u64, max_steps: u64) -> BenchmarkConfig {
    BenchmarkConfig::new(kind, tasks(ntasks, max_steps), eps)
}

pub fn server_config(policy: PolicyConfig) -> ModelServerConfig {
    ModelServerConfig {
        policy,
        port: 0,
        ..Default::default()
    }
}

pub fn start(cfg: &ModelServerConfig) -> ServerHandle {
    let mut cfg = cfg.clone();
    cfg.host = "127.0.0.1".into();
    cfg.port = 0;
    serve(&cfg).expect("server starts")
}

pub fn proportional_server() -> ServerHandle {
    start(&server_config(PolicyConfig::default()))
}

pub fn eval_config(bench: BenchmarkConfig, endpoint: &str, shards: usize) -> EvalConfig {
    EvalConfig::new(
        bench,
        RunSection {
            shards,
            server_endpoint: endpoint.to_owned(),
            ..Default::default()
        },
    )
    .expect("valid eval config")
}

pub fn options(termination: TerminationPolicy) -> RunnerOptions {
    RunnerOptions {
        termination,
        step_timeout: Duration::from_secs(10),
        connect_timeout: Duration::from_secs(5),
    }
}

/// Runs every episode of the first task of `cfg` over one connection.
pub fn run_first_task(cfg: &BenchmarkConfig, endpoint: &str, termination: TerminationPolicy) -> Vec<EpisodeResult> {
    let factory = {
        let cfg = cfg.clone();
        move || cfg.build()
    };
    let opts = options(termination);
    let mut link = Link::new(endpoint, opts.connect_timeout);
    run_task(&factory, &mut link, &cfg.tasks[0], cfg.episodes_per_task, cfg.base_seed, &opts)
}

pub fn untimed(rs: &[EpisodeResult]) -> Vec<EpisodeResult> {
    rs.iter().map(EpisodeResult::without_timing).collect()
}

pub fn data_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data")
}
