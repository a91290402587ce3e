//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::*;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use vla_eval::benchmark::{BenchmarkKind, NormalizationStats};
use vla_eval::config::{parse_eval_config, parse_eval_config_str, ConfigError};
use vla_eval::leaderboard::{coverage_distribution, validate_entry, LeaderboardEntry, Registry, Violation};
use vla_eval::model_server::{InferenceEngine, ModelServerConfig, ObservationPayload, PolicyConfig, PredictContext};
use vla_eval::orchestrator::{aggregate, plan_shards, run_sharded, speedup, Executor};
use vla_eval::protocol::conformance::{default_corpus_dir, verify_corpus};
use vla_eval::protocol::{decode_message, encode_message, Message, MsgType, Payload, Value};
use vla_eval::runner::{FailureReason, TerminationPolicy};
use vla_eval::throughput::{measure_lambda, measure_mu, probe_queue, select_operating_point, ThroughputProfile};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const HOUR: f64 = 3600.0;
const MINUTE: f64 = 60.0;

fn operating_point_fixture() -> Outcome {
    let profile = ThroughputProfile::new(&[(1, 11.2), (50, 364.6)], &[(1, 165.2), (16, 468.2)], 30.0);
    let op = select_operating_point(&profile, 0.8).map_err(|e| e.to_string())?;
    ensure!((op.n_star, op.b_star) == (50, 16), "N*={} B*={}", op.n_star, op.b_star);
    ensure!((op.utilization - 0.779).abs() <= 0.001, "utilization {}", op.utilization);
    ensure!((100.0 * op.utilization).round() == 78.0, "utilization {} is not 78%", op.utilization);
    let lambda_ratio = 364.6 / 11.2;
    let mu_ratio = 468.2 / 165.2;
    ensure!((lambda_ratio - 32.55_f64).abs() < 0.01, "λ ratio {lambda_ratio}");
    ensure!((mu_ratio - 2.834_f64).abs() < 0.001, "μ ratio {mu_ratio}");
    ensure!(format!("{lambda_ratio:.1}") == "32.6" && format!("{mu_ratio:.1}") == "2.8", "published ratios differ");
    Ok(format!(
        "N*={} B*={} util={:.4} λ×{lambda_ratio:.2} μ×{mu_ratio:.3}",
        op.n_star, op.b_star, op.utilization
    ))
}

fn speedup_arithmetic() -> Outcome {
    let libero = speedup(14.0 * HOUR, 18.0 * MINUTE);
    ensure!((libero - 46.667).abs() < 0.001, "speedup {libero}");
    ensure!(libero.round() == 47.0, "speedup {libero} does not round to 47");
    let mut detail = format!("14h/18min={libero:.2}");
    // declared speedup, shard count, approximate parallel wall time
    for (name, declared, shards, parallel_min) in [("calvin", 16.0, 16.0, 33.0), ("simpler", 12.0, 16.0, 8.5)] {
        let sequential = declared * parallel_min * MINUTE;
        let got = speedup(sequential, parallel_min * MINUTE);
        ensure!((got - declared).abs() <= 0.1 * declared, "{name}: {got} vs {declared}");
        ensure!(got <= shards * 1.1, "{name}: {got}× exceeds {shards} shards");
        detail.push_str(&format!(" {name}={got:.1}×/{shards} shards"));
    }
    Ok(detail)
}

fn shard_invariance() -> Outcome {
    let server = proportional_server();
    let mut b = bench(BenchmarkKind::PointReach, 2, 20, 60);
    b.params.step_cost_ms = 5.0;
    b.base_seed = 1000;
    let cfg = eval_config(b, &server.endpoint(), 1);
    let executor = Executor::Process {
        worker_bin: PathBuf::from(env!("CARGO_BIN_EXE_vla-eval-worker")),
        container_cmd: Vec::new(),
        work_dir: None,
    };
    let mut runs = Vec::new();
    for n in [1usize, 3, 8] {
        let plan = plan_shards(&cfg.benchmark.tasks, cfg.benchmark.episodes_per_task, cfg.benchmark.base_seed, n);
        let run = run_sharded(&plan, &cfg, &cfg.run.server_endpoint, &executor);
        ensure!(run.shard_errors.is_empty(), "N={n}: {:?}", run.shard_errors);
        ensure!(run.results.len() == 40, "N={n}: {} results", run.results.len());
        let metrics = aggregate(&run.results, false).map_err(|e| e.to_string())?.without_timing();
        runs.push((n, untimed(&run.results), metrics, run.wall_time_s));
    }
    let (_, base_results, base_metrics, wall_1) = &runs[0];
    for (n, results, metrics, _) in &runs[1..] {
        ensure!(results == base_results, "episode results differ at N={n}");
        ensure!(metrics == base_metrics, "metrics differ at N={n}");
    }
    let wall_8 = runs[2].3;
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let detail = format!(
        "identical for N=1,3,8; wall N=1 {wall_1:.2}s N=3 {:.2}s N=8 {wall_8:.2}s ratio {:.2} on {cores} core(s)",
        runs[1].3,
        wall_8 / wall_1
    );
    ensure!(wall_8 <= 0.5 * wall_1, "{detail}: N=8 slower than half of N=1");
    Ok(detail)
}

fn batch_equivalence() -> Outcome {
    let policy = PolicyConfig::default().build(4);
    let requests: Vec<(ObservationPayload, PredictContext)> = (0..256u64)
        .map(|i| {
            let x = (i as f64 * 0.37).sin();
            (
                ObservationPayload {
                    states: vec![x, -x / 2.0, 0.1 * (i % 7) as f64, 0.0, 0.0, 0.0],
                    ..Default::default()
                },
                PredictContext {
                    episode_id: format!("ep{}", i % 16),
                    step_index: i / 16,
                    task_id: "t".into(),
                    obs_step: i / 16,
                },
            )
        })
        .collect();
    let mut answers = Vec::new();
    for b in [1usize, 4, 16] {
        let engine = InferenceEngine::start(Arc::clone(&policy), b, Duration::from_millis(2));
        let rxs: Vec<_> = requests
            .iter()
            .map(|(o, c)| engine.submit(o.clone(), c.clone()).unwrap())
            .collect();
        let out: Vec<_> = rxs.into_iter().map(|rx| rx.recv().unwrap()).collect();
        engine.shutdown();
        ensure!(out.iter().all(Result::is_ok), "failed predictions at B={b}");
        answers.push((b, out, engine.stats().batches()));
    }
    for (b, out, _) in &answers[1..] {
        ensure!(out == &answers[0].1, "chunks differ at B={b}");
    }

    let (base_ms, per_item_ms) = (4.0, 0.5);
    let server = ModelServerConfig {
        max_wait_ms: 5.0,
        ..server_config(PolicyConfig::Slow {
            base_ms,
            per_item_ms,
            inner: Box::new(PolicyConfig::default()),
        })
    };
    let mu = measure_mu(&server, &[1, 16], Duration::from_secs(3));
    ensure!(mu.failures.is_empty(), "{:?}", mu.failures);
    let ratio = mu.samples[&16] / mu.samples[&1];
    let analytic = (16.0 / (base_ms + per_item_ms * 16.0)) / (1.0 / (base_ms + per_item_ms));
    let detail = format!(
        "256 chunks identical (batches {}/{}/{}); μ(1)={:.1} μ(16)={:.1} ratio {ratio:.2} vs analytic {analytic:.2}",
        answers[0].2, answers[1].2, answers[2].2, mu.samples[&1], mu.samples[&16]
    );
    ensure!(ratio >= 2.0, "{detail}: below 2");
    ensure!((ratio - analytic).abs() <= 0.2 * analytic, "{detail}: outside 20%");
    Ok(detail)
}

fn termination_audit() -> Outcome {
    let server = proportional_server();
    let mut cfg = bench(BenchmarkKind::TransientReach, 1, 10, 80);
    cfg.base_seed = 42;
    let early = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::StopOnTerminated);
    let full = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
    let rate = |rs: &[vla_eval::runner::EpisodeResult]| rs.iter().filter(|r| r.final_success).count() as f64 / rs.len() as f64;
    ensure!(early.len() == 10 && full.len() == 10, "episode counts");
    ensure!(rate(&early) == 1.0, "stop-on-terminated rate {}", rate(&early));
    ensure!(rate(&full) == 0.0, "run-to-truncation rate {}", rate(&full));
    ensure!(
        early.iter().chain(&full).all(|r| r.transient_success_step.is_some()),
        "transient success step missing"
    );
    Ok("stop_on_terminated 100%, run_to_truncation 0%, transient step in 20/20".into())
}

fn normalization_guard() -> Outcome {
    let text = "benchmark: point_reach\ntasks: [{task_id: a, max_episode_steps: 5}]\nnormalize: true\n";
    ensure!(
        matches!(parse_eval_config_str(text), Err(ConfigError::MissingNormalizationStats)),
        "normalize without stats parsed"
    );

    let mut raw = bench(BenchmarkKind::PointReach, 1, 1, 10);
    raw.params.extra_state_dims = 4;
    let dim = raw.state_dim();
    let stats = NormalizationStats::new(
        (0..dim).map(|i| 0.3 * i as f64 - 0.5).collect(),
        (0..dim).map(|i| 0.25 + 0.1 * i as f64).collect(),
    );
    let mut norm = raw.clone();
    norm.normalize = true;
    norm.normalization_stats = Some(stats.clone());
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let x = raw.build().reset("task_0", seed).map_err(|e| e.to_string())?.states;
        let z = over_the_wire(&norm.build().reset("task_0", seed).map_err(|e| e.to_string())?)?.states;
        for i in 0..dim {
            worst = worst.max((z[i] - (x[i] - stats.mean[i]) / stats.std[i]).abs());
        }
    }
    ensure!(worst <= 1e-12, "standardization error {worst:e}");

    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/bench_normalized_39d.yaml");
    let cfg = parse_eval_config(&path).map_err(|e| e.to_string())?;
    let stats39 = cfg.benchmark.normalization_stats.clone().ok_or("no stats in the 39-dim config")?;
    ensure!(stats39.dim() == 39, "stats dim {}", stats39.dim());
    let mut raw39 = cfg.benchmark.clone();
    raw39.normalize = false;
    let z = over_the_wire(&cfg.benchmark.build().reset("reach_scene", 5).map_err(|e| e.to_string())?)?.states;
    let x = raw39.build().reset("reach_scene", 5).map_err(|e| e.to_string())?.states;
    ensure!(z.len() == 39, "wire state has {} dims", z.len());
    let back = stats39.denormalize(&z);
    let err = back.iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    ensure!(err <= 1e-12, "39-dim round trip error {err:e}");
    Ok(format!("missing stats rejected; max |z-(x-μ)/σ|={worst:.1e}; 39-dim round trip {err:.1e}"))
}

fn over_the_wire(obs: &ObservationPayload) -> Result<ObservationPayload, String> {
    let bytes = encode_message(&Message::new(MsgType::Observation, obs.to_payload(), 1)).map_err(|e| e.to_string())?;
    let msg = decode_message(&bytes).map_err(|e| e.to_string())?;
    ObservationPayload::from_payload(&msg.payload).map_err(|e| e.to_string())
}

fn fault_isolation() -> Outcome {
    let server = proportional_server();
    let mut cfg = bench(BenchmarkKind::PointReach, 1, 10, 40);
    cfg.base_seed = 500;
    let baseline = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
    ensure!(baseline.iter().all(|r| !r.failed()), "baseline has failures");
    for k in [1u64, 5, 10] {
        let mut faulty = cfg.clone();
        faulty.params.crash_seeds = vec![cfg.base_seed + k - 1];
        faulty.params.crash_at_step = 7;
        let got = run_first_task(&faulty, &server.endpoint(), TerminationPolicy::RunToTruncation);
        ensure!(got.len() == 10, "k={k}: {} results", got.len());
        let crashes: Vec<usize> = (0..10)
            .filter(|&i| got[i].failure_reason == Some(FailureReason::EnvCrash))
            .collect();
        ensure!(crashes == vec![(k - 1) as usize], "k={k}: crashes at {crashes:?}");
        for i in (0..10).filter(|&i| i != (k - 1) as usize) {
            ensure!(got[i].without_timing() == baseline[i].without_timing(), "k={k}: episode {i} changed");
        }
    }
    Ok("k=1,5,10: one env_crash each, other 9 identical".into())
}

fn message_strategy() -> impl Strategy<Value = Message> {
    let leaf = prop_oneof![
        Just(Value::Nil),
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        any::<u64>().prop_map(Value::UInt),
        any::<f64>().prop_filter("finite", |f| f.is_finite()).prop_map(Value::Float),
        ".{0,24}".prop_map(Value::Str),
        prop::collection::vec(any::<u8>(), 0..200).prop_map(Value::Bin),
    ];
    let value = leaf.prop_recursive(3, 48, 6, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..6).prop_map(Value::Array),
            prop::collection::vec(("[a-z_]{1,10}", inner), 0..5).prop_map(|kv| Value::Map(kv.into_iter().collect())),
        ]
    });
    let payload = prop::collection::vec(("[a-zA-Z_]{0,12}", value), 0..6).prop_map(|kv| kv.into_iter().collect::<Payload>());
    let msg_type = prop::sample::select(vec![
        MsgType::Handshake,
        MsgType::Observation,
        MsgType::Action,
        MsgType::EpisodeStart,
        MsgType::EpisodeEnd,
        MsgType::Error,
    ]);
    (msg_type, payload, any::<u64>(), 0.0f64..4e9).prop_map(|(msg_type, payload, seq, timestamp)| Message {
        msg_type,
        payload,
        seq,
        timestamp,
    })
}

fn protocol_round_trip() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&message_strategy(), |m| {
            let bytes = encode_message(&m).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = decode_message(&bytes).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back, &m);
            prop_assert_eq!(encode_message(&back).unwrap(), bytes);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    let corpus = verify_corpus(&default_corpus_dir()).map_err(|e| e.to_string())?;
    ensure!(corpus >= 20, "corpus has {} frames", corpus);
    Ok(format!("1000 random messages round-trip; {} golden frames byte-stable", corpus))
}

fn queue_stability() -> Outcome {
    let window = Duration::from_secs(60);
    let (base_ms, per_item_ms) = (4.0, 0.5);
    let slow = PolicyConfig::Slow {
        base_ms,
        per_item_ms,
        inner: Box::new(PolicyConfig::default()),
    };
    let mut b = bench(BenchmarkKind::PointReach, 2, 100, 1000);
    b.params.step_cost_ms = 10.0;
    let lambda = measure_lambda(&b, &[1, 2, 4, 8], Duration::from_secs(1));
    let mu = measure_mu(&server_config(slow.clone()), &[1, 4, 16], Duration::from_secs(1));
    let profile = ThroughputProfile {
        lambda_samples: lambda.samples,
        mu_samples: mu.samples,
        measurement_duration_s: 1.0,
    };
    let op = select_operating_point(&profile, 0.8).map_err(|e| e.to_string())?;
    let b_star = op.b_star as usize;
    let arrival = profile.lambda_samples[&op.n_star];
    let mu_star = profile.mu_samples[&op.b_star];
    let every = Duration::from_millis(50);
    let wait = Duration::from_millis(5);
    let stable = probe_queue(slow.build(1), b_star, wait, arrival, window, every, 7);
    let overload = probe_queue(slow.build(1), b_star, wait, 1.5 * mu_star, window, every, 7);
    let detail = format!(
        "N*={} B*={b_star} λ={arrival:.0}/s μ={mu_star:.0}/s: p95 {} (< {}), overload final queue {} (> {})",
        op.n_star,
        stable.p95,
        2 * b_star,
        overload.final_len,
        10 * b_star
    );
    ensure!(stable.p95 < 2 * b_star, "{detail}");
    ensure!(overload.final_len > 10 * b_star, "{detail}");
    Ok(detail)
}

fn leaderboard_fixtures() -> Outcome {
    let sample = Registry::load(&data_dir().join("leaderboard/sample")).map_err(|e| e.to_string())?;
    ensure!(sample.validate().is_empty(), "sample registry has violations");
    let good = sample.entries[0].clone();
    let unknown = LeaderboardEntry {
        protocol_id: "not_a_protocol".into(),
        ..good.clone()
    };
    let out_of_range = LeaderboardEntry {
        value: 1e3,
        ..good.clone()
    };
    ensure!(
        matches!(validate_entry(&unknown, &sample.protocols, &[])[..], [Violation::UnknownProtocol(_)]),
        "unknown protocol accepted"
    );
    ensure!(
        matches!(validate_entry(&out_of_range, &sample.protocols, &[])[..], [Violation::OutOfRange { .. }]),
        "out-of-range value accepted"
    );
    ensure!(
        matches!(validate_entry(&good, &sample.protocols, &sample.entries)[..], [Violation::Duplicate(_)]),
        "duplicate accepted"
    );
    let hist: Vec<(usize, usize)> = coverage_distribution(&sample.entries)
        .map_err(|e| e.to_string())?
        .into_iter()
        .map(|(k, b)| (k, b.count))
        .collect();
    ensure!(hist == vec![(1, 7), (2, 3), (3, 1), (4, 1)], "sample histogram {hist:?}");

    let survey = Registry::load(&data_dir().join("leaderboard/survey")).map_err(|e| e.to_string())?;
    ensure!(survey.validate().is_empty(), "survey registry has violations");
    let dist = coverage_distribution(&survey.entries).map_err(|e| e.to_string())?;
    let single = dist[&1].fraction;
    ensure!((100.0 * single).round() == 81.0, "k=1 share {single}");
    Ok(format!(
        "3 violation classes rejected; sample histogram {hist:?}; survey k=1 {}/{} = {:.1}%",
        dist[&1].count,
        dist.values().map(|b| b.count).sum::<usize>(),
        100.0 * single
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("operating point fixture", operating_point_fixture),
        ("speedup arithmetic", speedup_arithmetic),
        ("shard invariance", shard_invariance),
        ("batch equivalence", batch_equivalence),
        ("termination policy audit", termination_audit),
        ("normalization guard", normalization_guard),
        ("fault isolation", fault_isolation),
        ("protocol round trip", protocol_round_trip),
        ("queue stability", queue_stability),
        ("leaderboard fixtures", leaderboard_fixtures),
    ];
    // `cargo test -- <filter>` narrows the run to matching criteria
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || f == &n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.1}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.1}s): {why}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
