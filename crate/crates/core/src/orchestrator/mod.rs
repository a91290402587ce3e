//! Episode sharding across benchmark workers, result aggregation and
//! speedup accounting.

mod exec;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::benchmark::TaskSpec;
use crate::runner::{Assignment, EpisodeResult, FailureReason};

pub use exec::{run_sharded, run_worker, Executor, ShardedRun, WorkerArgs};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardPlan {
    pub shard_count: usize,
    pub assignments: Vec<Vec<Assignment>>,
}

/// Global order is task-major; episode `g` goes to shard `g mod n` and is
/// seeded with `base_seed + g`.
pub fn plan_shards(tasks: &[TaskSpec], episodes_per_task: u64, base_seed: u64, n: usize) -> ShardPlan {
    assert!(n >= 1, "shard count must be at least 1");
    let mut assignments = vec![Vec::new(); n];
    let mut g: u64 = 0;
    for task in tasks {
        for i in 0..episodes_per_task {
            assignments[(g % n as u64) as usize].push(Assignment {
                task_id: task.task_id.clone(),
                episode_index: i,
                seed: base_seed + g,
            });
            g += 1;
        }
    }
    ShardPlan {
        shard_count: n,
        assignments,
    }
}

impl ShardPlan {
    pub fn total_episodes(&self) -> usize {
        self.assignments.iter().map(Vec::len).sum()
    }

    pub fn shard_sizes(&self) -> Vec<usize> {
        self.assignments.iter().map(Vec::len).collect()
    }

    /// Every assignment in global order.
    pub fn flatten(&self) -> Vec<Assignment> {
        let mut all: Vec<Assignment> = self.assignments.iter().flatten().cloned().collect();
        all.sort_by_key(|a| a.seed);
        all
    }
}

impl fmt::Display for ShardPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} episodes over {} shard(s)", self.total_episodes(), self.shard_count)?;
        for (i, shard) in self.assignments.iter().enumerate() {
            let mut per_task: BTreeMap<&str, usize> = BTreeMap::new();
            for a in shard {
                *per_task.entry(a.task_id.as_str()).or_default() += 1;
            }
            let tasks: Vec<String> = per_task.iter().map(|(t, c)| format!("{t}:{c}")).collect();
            let seeds = match (shard.first(), shard.last()) {
                (Some(a), Some(b)) => format!("seeds {}..={}", a.seed, b.seed),
                _ => "empty".into(),
            };
            writeln!(f, "  shard {i:>3}: {:>5} episodes  {seeds}  [{}]", shard.len(), tasks.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    /// Successes over all episodes of the task, infrastructure failures
    /// counted as failures.
    pub per_task_success_rate: BTreeMap<String, f64>,
    /// Successes over episodes that did not fail for infrastructure
    /// reasons; absent when every episode of the task did.
    pub per_task_success_rate_infra_excluded: BTreeMap<String, Option<f64>>,
    /// Mean of the strict per-task rates.
    pub suite_success_rate: f64,
    pub suite_success_rate_infra_excluded: Option<f64>,
    pub avg_chain_length: Option<f64>,
    pub episodes_total: u64,
    pub episodes_succeeded: u64,
    pub episodes_failed_infra: u64,
    pub failures_by_reason: BTreeMap<FailureReason, u64>,
    pub wall_time_s: f64,
    pub obs_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AggregateError {
    #[error("no episode results to aggregate")]
    EmptyResults,
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Aggregates per-episode outcomes. The result does not depend on the
/// order of `results`. `wall_time_s` is the summed episode time until
/// overridden with [`AggregateMetrics::with_wall_time`].
pub fn aggregate(results: &[EpisodeResult], chain_mode: bool) -> Result<AggregateMetrics, AggregateError> {
    if results.is_empty() {
        return Err(AggregateError::EmptyResults);
    }
    let mut sorted: Vec<&EpisodeResult> = results.iter().collect();
    sorted.sort_by(|a, b| (&a.task_id, a.seed, &a.episode_id).cmp(&(&b.task_id, b.seed, &b.episode_id)));

    #[derive(Default)]
    struct Counts {
        total: u64,
        succeeded: u64,
        infra: u64,
    }
    let mut per_task: BTreeMap<String, Counts> = BTreeMap::new();
    let mut failures_by_reason = BTreeMap::new();
    for r in &sorted {
        let c = per_task.entry(r.task_id.clone()).or_default();
        c.total += 1;
        c.succeeded += r.final_success as u64;
        if let Some(reason) = r.failure_reason {
            c.infra += 1;
            *failures_by_reason.entry(reason).or_insert(0) += 1;
        }
    }
    let per_task_success_rate: BTreeMap<String, f64> = per_task
        .iter()
        .map(|(t, c)| (t.clone(), c.succeeded as f64 / c.total as f64))
        .collect();
    let per_task_success_rate_infra_excluded: BTreeMap<String, Option<f64>> = per_task
        .iter()
        .map(|(t, c)| {
            let clean = c.total - c.infra;
            (t.clone(), (clean > 0).then(|| c.succeeded as f64 / clean as f64))
        })
        .collect();
    let suite_success_rate = mean(per_task_success_rate.values().copied()).unwrap_or(0.0);
    let suite_success_rate_infra_excluded = mean(per_task_success_rate_infra_excluded.values().flatten().copied());
    let avg_chain_length = if chain_mode {
        mean(sorted.iter().map(|r| r.chain_progress.unwrap_or(0) as f64))
    } else {
        None
    };
    let wall: f64 = sorted.iter().map(|r| r.wall_time_s).sum();
    let obs: u64 = sorted.iter().map(|r| r.obs_count).sum();
    Ok(AggregateMetrics {
        per_task_success_rate,
        per_task_success_rate_infra_excluded,
        suite_success_rate,
        suite_success_rate_infra_excluded,
        avg_chain_length,
        episodes_total: sorted.len() as u64,
        episodes_succeeded: per_task.values().map(|c| c.succeeded).sum(),
        episodes_failed_infra: per_task.values().map(|c| c.infra).sum(),
        failures_by_reason,
        wall_time_s: wall,
        obs_per_s: if wall > 0.0 { obs as f64 / wall } else { 0.0 },
    })
}

impl AggregateMetrics {
    /// Replaces the timing figures with a run-level wall time.
    pub fn with_wall_time(mut self, wall_time_s: f64, total_obs: u64) -> Self {
        self.wall_time_s = wall_time_s;
        self.obs_per_s = if wall_time_s > 0.0 { total_obs as f64 / wall_time_s } else { 0.0 };
        self
    }

    /// Copy with the timing figures zeroed, for outcome comparisons.
    pub fn without_timing(&self) -> Self {
        AggregateMetrics {
            wall_time_s: 0.0,
            obs_per_s: 0.0,
            ..self.clone()
        }
    }

    /// Human-readable metrics table.
    pub fn table(&self) -> String {
        let pct = |x: f64| format!("{:6.1}%", 100.0 * x);
        let mut s = String::new();
        s.push_str(&format!("{:<32} {:>8} {:>14}\n", "task", "strict", "infra-excluded"));
        for (task, rate) in &self.per_task_success_rate {
            let ex = self.per_task_success_rate_infra_excluded[task].map(pct).unwrap_or_else(|| "     n/a".into());
            s.push_str(&format!("{:<32} {:>8} {:>14}\n", task, pct(*rate), ex));
        }
        let ex = self.suite_success_rate_infra_excluded.map(pct).unwrap_or_else(|| "     n/a".into());
        s.push_str(&format!("{:<32} {:>8} {:>14}\n", "SUITE", pct(self.suite_success_rate), ex));
        if let Some(len) = self.avg_chain_length {
            s.push_str(&format!("avg chain length: {len:.3}\n"));
        }
        s.push_str(&format!(
            "episodes: {} total, {} succeeded, {} infra failures",
            self.episodes_total, self.episodes_succeeded, self.episodes_failed_infra
        ));
        for (reason, n) in &self.failures_by_reason {
            s.push_str(&format!(" [{reason}: {n}]"));
        }
        s.push_str(&format!("\nwall time: {:.2} s, {:.1} obs/s\n", self.wall_time_s, self.obs_per_s));
        s
    }
}

/// Wall-clock speedup `sequential / parallel`.
pub fn speedup(sequential_s: f64, parallel_s: f64) -> f64 {
    assert!(sequential_s > 0.0 && parallel_s > 0.0, "durations must be positive");
    sequential_s / parallel_s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tasks(n: usize) -> Vec<TaskSpec> {
        (0..n).map(|i| TaskSpec::new(&format!("t{i}"), 10)).collect()
    }

    fn result(task: &str, seed: u64, success: bool, failure: Option<FailureReason>) -> EpisodeResult {
        EpisodeResult {
            episode_id: format!("{task}#{seed}"),
            task_id: task.into(),
            seed,
            final_success: success,
            transient_success_step: None,
            steps_executed: 10,
            failure_reason: failure,
            failure_detail: None,
            wall_time_s: 1.0,
            obs_count: 11,
            chain_progress: None,
        }
    }

    #[test]
    fn seven_episodes_over_three_shards() {
        let plan = plan_shards(&tasks(1)[..1], 7, 0, 3);
        assert_eq!(plan.shard_sizes(), vec![3, 2, 2]);
    }

    #[test]
    fn single_shard_keeps_sequential_order() {
        let plan = plan_shards(&tasks(3), 4, 100, 1);
        let seeds: Vec<u64> = plan.assignments[0].iter().map(|a| a.seed).collect();
        assert_eq!(seeds, (100..112).collect::<Vec<_>>());
        assert_eq!(plan.assignments[0][4].task_id, "t1");
        assert_eq!(plan.assignments[0][4].episode_index, 0);
    }

    #[test]
    fn surplus_shards_are_empty() {
        let plan = plan_shards(&tasks(1), 2, 0, 5);
        assert_eq!(plan.shard_sizes(), vec![1, 1, 0, 0, 0]);
    }

    #[test]
    fn aggregate_rates_and_infra_accounting() {
        let mut rs: Vec<EpisodeResult> = (0..4).map(|i| result("a", i, i < 3, None)).collect();
        rs.push(result("b", 10, false, Some(FailureReason::EnvCrash)));
        rs.push(result("b", 11, true, None));
        let m = aggregate(&rs, false).unwrap();
        assert_eq!(m.per_task_success_rate["a"], 0.75);
        assert_eq!(m.per_task_success_rate["b"], 0.5);
        assert_eq!(m.per_task_success_rate_infra_excluded["b"], Some(1.0));
        assert_eq!(m.suite_success_rate, 0.625);
        assert_eq!(m.suite_success_rate_infra_excluded, Some(0.875));
        assert_eq!(m.episodes_failed_infra, 1);
        assert_eq!(m.failures_by_reason[&FailureReason::EnvCrash], 1);
        assert_eq!(m.avg_chain_length, None);
    }

    #[test]
    fn chain_length_is_mean_progress() {
        let rs: Vec<EpisodeResult> = [5, 5, 3, 4, 4]
            .iter()
            .enumerate()
            .map(|(i, p)| EpisodeResult {
                chain_progress: Some(*p),
                ..result("c", i as u64, *p == 5, None)
            })
            .collect();
        let len = aggregate(&rs, true).unwrap().avg_chain_length.unwrap();
        assert!((len - 4.2).abs() < 1e-12);
    }

    #[test]
    fn all_infra_failures_leave_excluded_rate_absent() {
        let rs: Vec<EpisodeResult> = (0..3).map(|i| result("a", i, false, Some(FailureReason::Timeout))).collect();
        let m = aggregate(&rs, false).unwrap();
        assert_eq!(m.suite_success_rate, 0.0);
        assert_eq!(m.suite_success_rate_infra_excluded, None);
        assert_eq!(aggregate(&[], false), Err(AggregateError::EmptyResults));
    }

    #[test]
    fn speedup_ratio() {
        assert_eq!(speedup(10.0, 10.0), 1.0);
        assert_eq!(speedup(50400.0, 1080.0).round(), 47.0);
    }

    proptest! {
        #[test]
        fn plan_partitions_episode_set(ntasks in 1usize..6, eps in 0u64..30, n in 1usize..12, base in 0u64..1000) {
            let ts = tasks(ntasks);
            let plan = plan_shards(&ts, eps, base, n);
            let mut seen: Vec<(String, u64)> = plan.assignments.iter().flatten()
                .map(|a| (a.task_id.clone(), a.episode_index)).collect();
            seen.sort();
            let mut expected: Vec<(String, u64)> = ts.iter()
                .flat_map(|t| (0..eps).map(move |i| (t.task_id.clone(), i))).collect();
            expected.sort();
            prop_assert_eq!(seen, expected);
            for t in &ts {
                let counts: Vec<usize> = plan.assignments.iter()
                    .map(|s| s.iter().filter(|a| a.task_id == t.task_id).count()).collect();
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
            let seeds: Vec<u64> = plan.flatten().iter().map(|a| a.seed).collect();
            prop_assert_eq!(seeds, (base..base + ntasks as u64 * eps).collect::<Vec<_>>());
        }

        #[test]
        fn aggregation_is_linear_over_shards(
            outcomes in prop::collection::vec((0usize..3, any::<bool>(), 0u8..5), 1..60),
            n in 1usize..6,
        ) {
            let rs: Vec<EpisodeResult> = outcomes.iter().enumerate().map(|(i, (t, s, f))| {
                let failure = match f { 0 => Some(FailureReason::EnvCrash), 1 => Some(FailureReason::Timeout), _ => None };
                result(&format!("t{t}"), i as u64, *s && failure.is_none(), failure)
            }).collect();
            let mut shards: Vec<Vec<EpisodeResult>> = vec![Vec::new(); n];
            for (i, r) in rs.iter().enumerate() {
                shards[(i * 7 + 3) % n].push(r.clone());
            }
            let union: Vec<EpisodeResult> = shards.into_iter().rev().flatten().collect();
            prop_assert_eq!(aggregate(&union, true).unwrap(), aggregate(&rs, true).unwrap());
        }
    }
}
