//! Runs one shard of an evaluation and streams its results as JSON lines.

use std::path::PathBuf;

use clap::Parser;
use vla_eval::orchestrator::{run_worker, WorkerArgs};

#[derive(Debug, Parser)]
#[command(name = "vla-eval-worker", version)]
struct Cli {
    /// Evaluation config; `run.shards` fixes the shard count.
    #[arg(long)]
    bench_config: PathBuf,
    #[arg(long)]
    shard: usize,
    /// Overrides `run.server_endpoint`.
    #[arg(long)]
    endpoint: Option<String>,
    /// JSON-lines output, one line per finished episode.
    #[arg(long)]
    out: PathBuf,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let args = WorkerArgs {
        bench_config: cli.bench_config,
        shard: cli.shard,
        endpoint: cli.endpoint,
        out: cli.out,
    };
    match run_worker(&args) {
        Ok(n) => log::info!("shard {}: {n} episode(s)", args.shard),
        Err(e) => {
            eprintln!("error: shard {}: {e}", args.shard);
            std::process::exit(1);
        }
    }
}
