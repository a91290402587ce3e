//! Benchmark side of the harness: the four-method step interface plus
//! deterministic synthetic environments used in place of real simulators.

mod config;
mod envs;
mod fault;
mod normalize;
mod render;

use serde::{Deserialize, Serialize};

use crate::model_server::ObservationPayload;
use crate::protocol::Payload;

pub use config::{BenchConfigError, BenchParams, BenchmarkConfig, BenchmarkKind, CostMode};
pub use envs::{chain_progress, EnvSettings, ChainReach, PointReach, TransientReach, FLOOR_Z, NUM_SUBGOALS, WORKSPACE_LIMIT};
pub use fault::FaultInjection;
pub use normalize::{NormalizationStats, StatsTarget};
pub use render::{render_scene, IMAGE_SIZE};

fn default_tolerance() -> f64 {
    0.03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub task_id: String,
    #[serde(default)]
    pub task_description: String,
    pub max_episode_steps: u64,
    /// Success radius, in workspace units.
    #[serde(default = "default_tolerance")]
    pub success_tolerance: f64,
}

impl TaskSpec {
    pub fn new(task_id: &str, max_episode_steps: u64) -> Self {
        TaskSpec {
            task_id: task_id.to_owned(),
            task_description: format!("reach the target ({task_id})"),
            max_episode_steps,
            success_tolerance: default_tolerance(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub obs: ObservationPayload,
    /// Environment-signalled stop. For the synthetic suite this mirrors
    /// `success_event`, which is exactly the overloading that inflates
    /// scores when a runner stops on it.
    pub terminated: bool,
    /// True exactly at `max_episode_steps`.
    pub truncated: bool,
    /// The success condition holds at this step.
    pub success_event: bool,
    pub info: Payload,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BenchError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("action has {got} entries, expected {expected}")]
    BadActionShape { expected: usize, got: usize },
    #[error("action contains non-finite entries")]
    NonFiniteAction,
    #[error("environment crashed: {0}")]
    EnvCrash(String),
    #[error("no active episode; call reset first")]
    NoActiveEpisode,
    #[error("get_step_result called before the first step")]
    NotStepped,
    #[error("normalize=true but no normalization statistics were supplied")]
    MissingNormalizationStats,
}

/// Step-style benchmark. Dynamics advance in `step`; judgments (success,
/// termination, truncation) are read in `get_step_result`.
pub trait Benchmark: Send {
    fn tasks(&self) -> &[TaskSpec];

    fn action_dim(&self) -> usize;

    /// Length of the state vector on the wire.
    fn state_dim(&self) -> usize;

    fn reset(&mut self, task_id: &str, seed: u64) -> Result<ObservationPayload, BenchError>;

    fn step(&mut self, action: &[f64]) -> Result<(), BenchError>;

    fn make_obs(&self) -> Result<ObservationPayload, BenchError>;

    fn get_step_result(&self) -> Result<StepResult, BenchError>;

    /// Consecutive sub-goals completed, for chained-sequence benchmarks.
    fn chained_subtask_progress(&self) -> Option<u32> {
        None
    }
}

impl<B: Benchmark + ?Sized> Benchmark for Box<B> {
    fn tasks(&self) -> &[TaskSpec] {
        (**self).tasks()
    }
    fn action_dim(&self) -> usize {
        (**self).action_dim()
    }
    fn state_dim(&self) -> usize {
        (**self).state_dim()
    }
    fn reset(&mut self, task_id: &str, seed: u64) -> Result<ObservationPayload, BenchError> {
        (**self).reset(task_id, seed)
    }
    fn step(&mut self, action: &[f64]) -> Result<(), BenchError> {
        (**self).step(action)
    }
    fn make_obs(&self) -> Result<ObservationPayload, BenchError> {
        (**self).make_obs()
    }
    fn get_step_result(&self) -> Result<StepResult, BenchError> {
        (**self).get_step_result()
    }
    fn chained_subtask_progress(&self) -> Option<u32> {
        (**self).chained_subtask_progress()
    }
}
