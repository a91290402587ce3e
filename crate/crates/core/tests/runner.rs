mod common;

use std::time::Duration;

use common::*;
use proptest::prelude::*;
use vla_eval::benchmark::BenchmarkKind;
use vla_eval::model_server::PolicyConfig;
use vla_eval::runner::{run_assignments, Assignment, FailureReason, Link, RunnerOptions, TerminationPolicy};

#[test]
fn crash_changes_only_the_crashed_episode() {
    let server = proportional_server();
    let mut cfg = bench(BenchmarkKind::PointReach, 1, 10, 40);
    cfg.base_seed = 500;
    let baseline = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
    assert!(baseline.iter().all(|r| !r.failed()));
    for k in [1u64, 5, 10] {
        let mut faulty = cfg.clone();
        faulty.params.crash_seeds = vec![cfg.base_seed + k - 1];
        faulty.params.crash_at_step = 7;
        let got = run_first_task(&faulty, &server.endpoint(), TerminationPolicy::RunToTruncation);
        assert_eq!(got.len(), 10);
        let crashed: Vec<usize> = (0..10).filter(|&i| got[i].failed()).collect();
        assert_eq!(crashed, vec![(k - 1) as usize], "k = {k}");
        let r = &got[(k - 1) as usize];
        assert_eq!(r.failure_reason, Some(FailureReason::EnvCrash));
        assert_eq!(r.steps_executed, 7);
        assert!(!r.final_success);
        for i in (0..10).filter(|&i| i != (k - 1) as usize) {
            assert_eq!(got[i].without_timing(), baseline[i].without_timing(), "episode {i}, k = {k}");
        }
    }
}

#[test]
fn conservation_of_observations() {
    let server = proportional_server();
    for kind in [BenchmarkKind::PointReach, BenchmarkKind::TransientReach, BenchmarkKind::ChainReach] {
        for policy in [TerminationPolicy::RunToTruncation, TerminationPolicy::StopOnTerminated] {
            let cfg = bench(kind, 1, 4, 50);
            for r in run_first_task(&cfg, &server.endpoint(), policy) {
                assert!(!r.failed());
                assert_eq!(r.obs_count, r.steps_executed + 1, "{kind:?} {policy:?}");
            }
        }
    }
}

#[test]
fn truncation_runs_to_the_step_limit() {
    let server = proportional_server();
    let cfg = bench(BenchmarkKind::PointReach, 1, 5, 33);
    for r in run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation) {
        assert_eq!(r.steps_executed, 33);
    }
}

#[test]
fn overshoot_is_caught_by_run_to_truncation() {
    let server = proportional_server();
    let mut cfg = bench(BenchmarkKind::TransientReach, 1, 10, 80);
    cfg.base_seed = 42;
    let early = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::StopOnTerminated);
    let full = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
    assert!(early.iter().all(|r| r.final_success && r.transient_success_step.is_some()));
    assert!(full.iter().all(|r| !r.final_success && r.transient_success_step.is_some()));
    for (a, b) in early.iter().zip(&full) {
        assert_eq!(a.transient_success_step, b.transient_success_step);
        assert!(a.steps_executed < b.steps_executed);
    }
}

#[test]
fn killed_server_fails_remaining_episodes_without_losing_any() {
    let mut server = proportional_server();
    let mut cfg = bench(BenchmarkKind::PointReach, 1, 30, 50);
    cfg.params.step_cost_ms = 2.0;
    let endpoint = server.endpoint();
    let worker = std::thread::spawn(move || run_first_task(&cfg, &endpoint, TerminationPolicy::RunToTruncation));
    std::thread::sleep(Duration::from_millis(400));
    server.shutdown();
    let results = worker.join().unwrap();
    assert_eq!(results.len(), 30);
    let first_failure = results.iter().position(|r| r.failed()).expect("some episode lost the server");
    assert!(first_failure > 0, "the server was up for the first episode");
    for r in &results[first_failure..] {
        assert_eq!(r.failure_reason, Some(FailureReason::ProtocolError), "{r:?}");
    }
    for r in &results[..first_failure] {
        assert!(r.final_success);
    }
}

#[test]
fn unreachable_server_yields_protocol_errors() {
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let cfg = bench(BenchmarkKind::PointReach, 1, 3, 10);
    let results = run_first_task(&cfg, &format!("ws://127.0.0.1:{port}"), TerminationPolicy::RunToTruncation);
    assert_eq!(results.len(), 3);
    assert!(results.iter().all(|r| r.failure_reason == Some(FailureReason::ProtocolError)));
}

#[test]
fn wrong_action_width_is_a_model_error() {
    let server = start(&server_config(PolicyConfig::Constant { action: vec![0.1, 0.0, 0.0] }));
    let cfg = bench(BenchmarkKind::PointReach, 1, 2, 10);
    let results = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
    assert!(results.iter().all(|r| r.failure_reason == Some(FailureReason::ModelError)));
    assert!(results.iter().all(|r| r.steps_executed == 0 && r.obs_count == 1));
}

#[test]
fn slow_model_times_out_per_episode() {
    let _t = timing_lock();
    let server = start(&server_config(PolicyConfig::Slow {
        base_ms: 300.0,
        per_item_ms: 0.0,
        inner: Box::new(PolicyConfig::default()),
    }));
    let cfg = bench(BenchmarkKind::PointReach, 1, 2, 10);
    let factory = {
        let cfg = cfg.clone();
        move || cfg.build()
    };
    let opts = RunnerOptions {
        termination: TerminationPolicy::RunToTruncation,
        step_timeout: Duration::from_millis(50),
        connect_timeout: Duration::from_secs(5),
    };
    let mut link = Link::new(&server.endpoint(), opts.connect_timeout);
    let assignments: Vec<Assignment> = (0..2)
        .map(|i| Assignment {
            task_id: "task_0".into(),
            episode_index: i,
            seed: i,
        })
        .collect();
    let results = run_assignments(&factory, &mut link, &assignments, &opts, &mut |_| {});
    assert_eq!(results.len(), 2);
    assert!(results.iter().all(|r| r.failure_reason == Some(FailureReason::Timeout)), "{results:?}");
}

#[test]
fn unknown_task_is_isolated() {
    let server = proportional_server();
    let cfg = bench(BenchmarkKind::PointReach, 1, 1, 10);
    let factory = move || cfg.build();
    let opts = options(TerminationPolicy::RunToTruncation);
    let mut link = Link::new(&server.endpoint(), opts.connect_timeout);
    let assignments = vec![
        Assignment {
            task_id: "missing".into(),
            episode_index: 0,
            seed: 0,
        },
        Assignment {
            task_id: "task_0".into(),
            episode_index: 0,
            seed: 0,
        },
    ];
    let results = run_assignments(&factory, &mut link, &assignments, &opts, &mut |_| {});
    assert_eq!(results[0].failure_reason, Some(FailureReason::EnvCrash));
    assert!(results[1].final_success);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn isolation_for_any_crash_position(k in 0u64..6, at in 0u64..25, base in 0u64..10_000) {
        let server = proportional_server();
        let mut cfg = bench(BenchmarkKind::PointReach, 1, 6, 25);
        cfg.base_seed = base;
        let baseline = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
        cfg.params.crash_seeds = vec![base + k];
        cfg.params.crash_at_step = at;
        let got = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
        for i in 0..6usize {
            if i as u64 == k {
                prop_assert_eq!(got[i].failure_reason, Some(FailureReason::EnvCrash));
            } else {
                prop_assert_eq!(got[i].without_timing(), baseline[i].without_timing());
            }
        }
    }

    #[test]
    fn early_stop_never_deflates(base in 0u64..10_000, stable in 0u64..8, max_steps in 5u64..90) {
        let server = proportional_server();
        for kind in [BenchmarkKind::PointReach, BenchmarkKind::TransientReach] {
            let mut cfg = bench(kind, 1, 3, max_steps);
            cfg.base_seed = base;
            cfg.params.stable_steps = stable;
            let early = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::StopOnTerminated);
            let full = run_first_task(&cfg, &server.endpoint(), TerminationPolicy::RunToTruncation);
            for (e, f) in early.iter().zip(&full) {
                prop_assert!(!f.final_success || e.final_success, "{:?} {:?}", e, f);
                prop_assert_eq!(e.obs_count, e.steps_executed + 1);
                prop_assert_eq!(f.obs_count, f.steps_executed + 1);
            }
        }
    }
}
