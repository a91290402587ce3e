use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::envs::{ChainReach, EnvSettings, PointReach, TransientReach};
use super::{Benchmark, FaultInjection, NormalizationStats, TaskSpec};
use crate::runner::TerminationPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    PointReach,
    TransientReach,
    ChainReach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CostMode {
    /// Yield the CPU for the step cost.
    #[default]
    Sleep,
    /// Busy-wait for the step cost.
    Spin,
}

fn default_max_step() -> f64 {
    0.05
}

fn default_stable_steps() -> u64 {
    1
}

fn default_action_dim() -> usize {
    7
}

/// Environment knobs. Fault injection is active iff `crash_seeds` is nonempty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchParams {
    #[serde(default = "default_max_step")]
    pub max_step: f64,
    #[serde(default)]
    pub step_cost_ms: f64,
    #[serde(default)]
    pub step_cost_mode: CostMode,
    #[serde(default)]
    pub extra_state_dims: usize,
    /// Steps a transient success survives before the block topples.
    #[serde(default = "default_stable_steps")]
    pub stable_steps: u64,
    #[serde(default)]
    pub crash_seeds: Vec<u64>,
    #[serde(default)]
    pub crash_at_step: u64,
    #[serde(default = "default_action_dim")]
    pub action_dim: usize,
}

impl Default for BenchParams {
    fn default() -> Self {
        BenchParams {
            max_step: default_max_step(),
            step_cost_ms: 0.0,
            step_cost_mode: CostMode::Sleep,
            extra_state_dims: 0,
            stable_steps: default_stable_steps(),
            crash_seeds: Vec::new(),
            crash_at_step: 0,
            action_dim: default_action_dim(),
        }
    }
}

fn default_episodes() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub benchmark: BenchmarkKind,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "default_episodes")]
    pub episodes_per_task: u64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization_stats: Option<NormalizationStats>,
    #[serde(default)]
    pub termination_policy: TerminationPolicy,
    #[serde(default)]
    pub params: BenchParams,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchConfigError {
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error("normalize=true but normalization_stats is absent")]
    MissingNormalizationStats,
}

fn invalid(path: &str, message: impl Into<String>) -> BenchConfigError {
    BenchConfigError::Invalid {
        path: path.to_owned(),
        message: message.into(),
    }
}

impl BenchmarkConfig {
    pub fn new(benchmark: BenchmarkKind, tasks: Vec<TaskSpec>, episodes_per_task: u64) -> Self {
        BenchmarkConfig {
            benchmark,
            tasks,
            episodes_per_task,
            base_seed: 0,
            normalize: false,
            normalization_stats: None,
            termination_policy: TerminationPolicy::default(),
            params: BenchParams::default(),
        }
    }

    /// State vector length on the wire.
    pub fn state_dim(&self) -> usize {
        let base = match self.benchmark {
            BenchmarkKind::PointReach | BenchmarkKind::TransientReach => 6,
            BenchmarkKind::ChainReach => 7,
        };
        base + self.params.extra_state_dims
    }

    pub fn total_episodes(&self) -> u64 {
        self.tasks.len() as u64 * self.episodes_per_task
    }

    pub fn validate(&self) -> Result<(), BenchConfigError> {
        if self.tasks.is_empty() {
            return Err(invalid("tasks", "at least one task is required"));
        }
        for (i, t) in self.tasks.iter().enumerate() {
            if t.task_id.is_empty() {
                return Err(invalid(&format!("tasks[{i}].task_id"), "must be nonempty"));
            }
            if t.max_episode_steps == 0 {
                return Err(invalid(&format!("tasks[{i}].max_episode_steps"), "must be at least 1"));
            }
            if !(t.success_tolerance.is_finite() && t.success_tolerance > 0.0) {
                return Err(invalid(&format!("tasks[{i}].success_tolerance"), "must be positive"));
            }
            if self.tasks[..i].iter().any(|u| u.task_id == t.task_id) {
                return Err(invalid(&format!("tasks[{i}].task_id"), format!("duplicate task {:?}", t.task_id)));
            }
        }
        if self.episodes_per_task == 0 {
            return Err(invalid("episodes_per_task", "must be at least 1"));
        }
        let p = &self.params;
        if !(p.max_step.is_finite() && p.max_step > 0.0) {
            return Err(invalid("params.max_step", "must be positive"));
        }
        if !(p.step_cost_ms.is_finite() && p.step_cost_ms >= 0.0) {
            return Err(invalid("params.step_cost_ms", "must be non-negative"));
        }
        if p.action_dim < 3 {
            return Err(invalid("params.action_dim", "must be at least 3"));
        }
        if p.stable_steps == 0 {
            return Err(invalid("params.stable_steps", "must be at least 1"));
        }
        match (&self.normalization_stats, self.normalize) {
            (None, true) => return Err(BenchConfigError::MissingNormalizationStats),
            (Some(stats), _) => {
                stats
                    .validate()
                    .map_err(|m| invalid("normalization_stats", m))?;
                if stats.dim() != self.state_dim() {
                    return Err(invalid(
                        "normalization_stats",
                        format!("stats have {} dims but the state has {}", stats.dim(), self.state_dim()),
                    ));
                }
            }
            (None, false) => {}
        }
        Ok(())
    }

    fn settings(&self) -> EnvSettings {
        EnvSettings {
            max_step: self.params.max_step,
            step_cost: Duration::from_secs_f64(self.params.step_cost_ms / 1000.0),
            cost_mode: self.params.step_cost_mode,
            extra_state_dims: self.params.extra_state_dims,
            action_dim: self.params.action_dim,
            normalize: self.normalize,
            stats: if self.normalize { self.normalization_stats.clone() } else { None },
        }
    }

    /// Fresh benchmark instance. Call `validate` first.
    pub fn build(&self) -> Box<dyn Benchmark> {
        let tasks = self.tasks.clone();
        let settings = self.settings();
        let env: Box<dyn Benchmark> = match self.benchmark {
            BenchmarkKind::PointReach => Box::new(PointReach::new(tasks, settings)),
            BenchmarkKind::TransientReach => Box::new(TransientReach::new(tasks, settings, self.params.stable_steps)),
            BenchmarkKind::ChainReach => Box::new(ChainReach::new(tasks, settings)),
        };
        if self.params.crash_seeds.is_empty() {
            env
        } else {
            Box::new(FaultInjection::new(
                env,
                self.params.crash_seeds.iter().copied(),
                self.params.crash_at_step,
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const YAML: &str = "
benchmark: point_reach
tasks:
  - task_id: reach_a
    max_episode_steps: 40
episodes_per_task: 3
";

    #[test]
    fn minimal_yaml_gets_defaults() {
        let cfg: BenchmarkConfig = serde_yaml::from_str(YAML).unwrap();
        assert_eq!(cfg.base_seed, 0);
        assert_eq!(cfg.termination_policy, TerminationPolicy::RunToTruncation);
        assert_eq!(cfg.params, BenchParams::default());
        assert_eq!(cfg.tasks[0].success_tolerance, 0.03);
        cfg.validate().unwrap();
        assert_eq!(cfg.total_episodes(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = format!("{YAML}colour: blue\n");
        assert!(serde_yaml::from_str::<BenchmarkConfig>(&bad).is_err());
    }

    #[test]
    fn normalize_without_stats_is_rejected() {
        let mut cfg: BenchmarkConfig = serde_yaml::from_str(YAML).unwrap();
        cfg.normalize = true;
        assert_eq!(cfg.validate(), Err(BenchConfigError::MissingNormalizationStats));
        cfg.normalization_stats = Some(NormalizationStats::new(vec![0.0; 5], vec![1.0; 5]));
        assert!(matches!(cfg.validate(), Err(BenchConfigError::Invalid { .. })));
        cfg.normalization_stats = Some(NormalizationStats::new(vec![0.0; 6], vec![1.0; 6]));
        cfg.validate().unwrap();
    }

    #[test]
    fn crash_seeds_wrap_in_fault_injection() {
        let mut cfg: BenchmarkConfig = serde_yaml::from_str(YAML).unwrap();
        cfg.params.crash_seeds = vec![1];
        cfg.params.crash_at_step = 2;
        let mut env = cfg.build();
        env.reset("reach_a", 1).unwrap();
        env.step(&[0.0; 7]).unwrap();
        env.step(&[0.0; 7]).unwrap();
        assert!(env.step(&[0.0; 7]).is_err());
    }
}
