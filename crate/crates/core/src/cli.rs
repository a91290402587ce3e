//! The `vla-eval` command line: `serve`, `run`, `tune` and `board`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::benchmark::BenchmarkKind;
use crate::config::{parse_eval_config, parse_server_config, EvalConfig, ResultRecord};
use crate::leaderboard::{coverage_distribution, query, render, OutputFormat, QueryFilter, Registry};
use crate::model_server::{serve, ModelServerConfig, ServeError};
use crate::orchestrator::{aggregate, plan_shards, run_sharded, Executor};
use crate::runner::Connection;
use crate::throughput::{
    measure_lambda, measure_mu, project_wall_time, select_operating_point, ThroughputProfile,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN_FAILURE: i32 = 1;
pub const EXIT_CONFIG_ERROR: i32 = 2;

/// Default output directory for `run` when `--out` is absent.
pub const OUT_ENV: &str = "VLA_EVAL_OUT";

#[derive(Debug, Parser)]
#[command(name = "vla-eval", version, about = "Evaluate policies served over the wire protocol")]
pub struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Host a policy until SIGINT/SIGTERM.
    Serve {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run an evaluation against a running server.
    Run(RunArgs),
    /// Measure λ(N) and μ(B) and pick an operating point.
    Tune(TuneArgs),
    /// Leaderboard registry tools.
    #[command(subcommand)]
    Board(BoardCommand),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExecutorKind {
    /// Worker processes when the worker binary is found, threads otherwise.
    Auto,
    Process,
    Inprocess,
    Sequential,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Print the shard plan and exit without connecting.
    #[arg(long)]
    pub dry_run: bool,
    /// Parent directory of the result record (default: $VLA_EVAL_OUT, then ./results).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ExecutorKind::Auto)]
    pub executor: ExecutorKind,
    /// Worker binary for the process executor (default: next to this binary).
    #[arg(long)]
    pub worker_bin: Option<PathBuf>,
    /// Command prefix wrapping each worker, e.g. "docker run --rm IMAGE".
    #[arg(long)]
    pub container_cmd: Option<String>,
    /// Exit 0 even when episodes fail for infrastructure reasons.
    #[arg(long)]
    pub allow_infra_failures: bool,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub bench_config: PathBuf,
    #[arg(long)]
    pub server_config: PathBuf,
    /// Shard counts to sample.
    #[arg(long = "Ns", value_delimiter = ',', default_value = "1,2,4,8")]
    pub ns: Vec<usize>,
    /// Batch sizes to sample.
    #[arg(long = "Bs", value_delimiter = ',', default_value = "1,2,4,8,16")]
    pub bs: Vec<usize>,
    /// Measurement window per sample point.
    #[arg(long, default_value = "30s", value_parser = humantime::parse_duration)]
    pub duration: Duration,
    /// Overrides `run.headroom` from the benchmark config.
    #[arg(long)]
    pub headroom: Option<f64>,
    /// Directory for tune.json and curves.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum BoardCommand {
    /// Check every entry of a registry directory against its protocols.
    Validate { dir: PathBuf },
    /// Ranked tables, one per comparability group.
    Query {
        #[arg(long)]
        registry: PathBuf,
        #[arg(long)]
        benchmark: Option<String>,
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        group: Option<String>,
        #[arg(long, default_value = "table")]
        out: OutputFormat,
    },
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG_ERROR } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::new().parse_filters(&cli.log_level).try_init();
    match cli.command {
        Command::Serve { config } => cmd_serve(&config),
        Command::Run(args) => cmd_run(&args),
        Command::Tune(args) => cmd_tune(&args),
        Command::Board(BoardCommand::Validate { dir }) => cmd_board_validate(&dir),
        Command::Board(BoardCommand::Query {
            registry,
            benchmark,
            model,
            group,
            out,
        }) => cmd_board_query(&registry, QueryFilter { benchmark, model, group }, out),
    }
}

fn flush_stdout() {
    let _ = std::io::stdout().flush();
}

pub fn cmd_serve(config_path: &Path) -> i32 {
    let cfg = match parse_server_config(config_path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", config_path.display());
            return EXIT_CONFIG_ERROR;
        }
    };
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        if let Err(e) = signal_hook::flag::register(sig, Arc::clone(&stop)) {
            eprintln!("error: cannot install signal handler: {e}");
            return EXIT_RUN_FAILURE;
        }
    }
    let mut handle = match serve(&cfg) {
        Ok(h) => h,
        Err(ServeError::Bind { addr, source }) => {
            eprintln!("error: cannot bind {addr} (port {}): {source}", cfg.port);
            return EXIT_RUN_FAILURE;
        }
        Err(e @ ServeError::InvalidConfig(..)) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    println!("serving {} on {}", cfg.policy.name(), handle.endpoint());
    flush_stdout();
    while !stop.load(Ordering::SeqCst) {
        std::thread::sleep(Duration::from_millis(50));
    }
    log::info!("signal received, shutting down");
    handle.shutdown();
    println!("server stopped");
    flush_stdout();
    EXIT_OK
}

fn kind_name(kind: BenchmarkKind) -> String {
    serde_json::to_value(kind)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_else(|| "benchmark".into())
}

fn executor_for(args: &RunArgs) -> Result<Executor, String> {
    let worker_bin = match &args.worker_bin {
        Some(p) => Some(p.clone()),
        None => std::env::current_exe()
            .ok()
            .and_then(|exe| exe.parent().map(|d| d.join(format!("vla-eval-worker{}", std::env::consts::EXE_SUFFIX))))
            .filter(|p| p.is_file()),
    };
    let container_cmd: Vec<String> = args
        .container_cmd
        .as_deref()
        .map(|c| c.split_whitespace().map(str::to_owned).collect())
        .unwrap_or_default();
    let process = |bin: PathBuf| Executor::Process {
        worker_bin: bin,
        container_cmd: container_cmd.clone(),
        work_dir: None,
    };
    match (args.executor, worker_bin) {
        (ExecutorKind::Sequential, _) => Ok(Executor::Sequential),
        (ExecutorKind::Inprocess, _) => Ok(Executor::InProcess),
        (ExecutorKind::Process | ExecutorKind::Auto, Some(bin)) => Ok(process(bin)),
        (ExecutorKind::Auto, None) => Ok(Executor::InProcess),
        (ExecutorKind::Process, None) => Err("no worker binary found; pass --worker-bin".into()),
    }
}

fn out_root(args: &RunArgs) -> PathBuf {
    args.out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Contacts the server once and returns its announced config.
fn probe_server(cfg: &EvalConfig) -> Result<Option<ModelServerConfig>, String> {
    let opts = cfg.runner_options();
    let conn = Connection::connect(&cfg.run.server_endpoint, opts.connect_timeout).map_err(|e| e.to_string())?;
    let server_cfg = conn.server_config().and_then(|s| serde_json::from_str(s).ok());
    conn.close();
    Ok(server_cfg)
}

pub fn cmd_run(args: &RunArgs) -> i32 {
    let cfg = match parse_eval_config(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.config.display());
            return EXIT_CONFIG_ERROR;
        }
    };
    let bench = &cfg.benchmark;
    let plan = plan_shards(&bench.tasks, bench.episodes_per_task, bench.base_seed, cfg.run.shards);
    if args.dry_run {
        println!("config {}", cfg.config_hash());
        print!("{plan}");
        return EXIT_OK;
    }
    let executor = match executor_for(args) {
        Ok(e) => e,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    let server_cfg = match probe_server(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: server not usable: {e}");
            return EXIT_RUN_FAILURE;
        }
    };

    let started = chrono::Utc::now();
    let run = run_sharded(&plan, &cfg, &cfg.run.server_endpoint, &executor);
    let finished = chrono::Utc::now();
    for (shard, e) in &run.shard_errors {
        eprintln!("warning: shard {shard}: {e}");
    }
    let metrics = match aggregate(&run.results, bench.benchmark == BenchmarkKind::ChainReach) {
        Ok(m) => m.with_wall_time(run.wall_time_s, run.total_obs()),
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_RUN_FAILURE;
        }
    };
    let infra_failures = metrics.episodes_failed_infra;
    let record = ResultRecord::new(cfg.clone(), server_cfg, metrics, run.results, started, finished);

    let dir = out_root(args).join(format!(
        "{}-{}-{}",
        kind_name(bench.benchmark),
        &cfg.config_hash()[..12],
        started.format("%Y%m%dT%H%M%S%.3fZ")
    ));
    if let Err(e) = record.write_to(&dir) {
        eprintln!("error: cannot write results to {}: {e}", dir.display());
        return EXIT_RUN_FAILURE;
    }
    print!("{}", record.metrics.table());
    println!("results: {}", dir.display());
    flush_stdout();

    if infra_failures > 0 && !(args.allow_infra_failures || cfg.run.allow_infra_failures) {
        eprintln!("error: {infra_failures} episode(s) failed for infrastructure reasons");
        return EXIT_RUN_FAILURE;
    }
    EXIT_OK
}

pub fn cmd_tune(args: &TuneArgs) -> i32 {
    let cfg = match parse_eval_config(&args.bench_config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.bench_config.display());
            return EXIT_CONFIG_ERROR;
        }
    };
    let server = match parse_server_config(&args.server_config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}: {e}", args.server_config.display());
            return EXIT_CONFIG_ERROR;
        }
    };
    if args.ns.contains(&0) || args.bs.contains(&0) || args.ns.is_empty() || args.bs.is_empty() {
        eprintln!("error: --Ns and --Bs must be non-empty lists of positive integers");
        return EXIT_CONFIG_ERROR;
    }
    let headroom = args.headroom.unwrap_or(cfg.run.headroom);

    let lambda = measure_lambda(&cfg.benchmark, &args.ns, args.duration);
    let mu = measure_mu(&server, &args.bs, args.duration);
    for (x, e) in lambda.failures.iter().chain(&mu.failures) {
        eprintln!("warning: sample {x} failed: {e}");
    }
    let profile = ThroughputProfile {
        lambda_samples: lambda.samples,
        mu_samples: mu.samples,
        measurement_duration_s: args.duration.as_secs_f64(),
    };
    let chosen = select_operating_point(&profile, headroom);
    let mut report = serde_json::json!({ "profile": profile });
    match &chosen {
        Ok(op) => {
            let tasks = &cfg.benchmark.tasks;
            let mean_steps = tasks.iter().map(|t| t.max_episode_steps as f64).sum::<f64>() / tasks.len().max(1) as f64;
            report["operating_point"] = serde_json::json!(op);
            report["projected_wall_time_s"] =
                serde_json::json!(project_wall_time(cfg.benchmark.total_episodes(), mean_steps, op, &profile));
        }
        Err(e) => report["error"] = serde_json::json!(e.to_string()),
    }
    let text = serde_json::to_string_pretty(&report).expect("tune report serializes");
    println!("{text}");
    if let Some(dir) = &args.out {
        let written = std::fs::create_dir_all(dir)
            .and_then(|_| std::fs::write(dir.join("tune.json"), format!("{text}\n")))
            .and_then(|_| std::fs::write(dir.join("curves.csv"), profile.to_csv()));
        if let Err(e) = written {
            eprintln!("error: cannot write to {}: {e}", dir.display());
            return EXIT_RUN_FAILURE;
        }
    }
    match chosen {
        Ok(_) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_RUN_FAILURE
        }
    }
}

pub fn cmd_board_validate(dir: &Path) -> i32 {
    let registry = match Registry::load(dir) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    let violations = registry.validate();
    for (i, v) in &violations {
        println!("{}: entry {i}: {v}", registry.origins[*i]);
    }
    println!(
        "{} entries, {} protocols, {} violation(s)",
        registry.entries.len(),
        registry.protocols.len(),
        violations.len()
    );
    if let Ok(dist) = coverage_distribution(&registry.entries) {
        println!("benchmarks per model:");
        for (k, b) in &dist {
            println!("  {k:>3}: {:>5} ({:5.1}%)", b.count, 100.0 * b.fraction);
        }
    }
    if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_RUN_FAILURE
    }
}

pub fn cmd_board_query(registry: &Path, filter: QueryFilter, format: OutputFormat) -> i32 {
    let registry = match Registry::load(registry) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG_ERROR;
        }
    };
    print!("{}", render(&query(&registry.entries, &registry.protocols, &filter), format));
    EXIT_OK
}
