//! Synchronous episode runner: one benchmark instance, one model-server
//! connection, an observe→act→step loop, and per-episode failure isolation.

mod connection;
mod episode;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use connection::{ActError, ConnectError, Connection};
pub use episode::{run_assignments, run_episode, run_task, Assignment, Link, RunnerOptions};

/// Infrastructure failure classes. Any of them forces `final_success=false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    EnvCrash,
    Timeout,
    ProtocolError,
    ModelError,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::EnvCrash => "env_crash",
            FailureReason::Timeout => "timeout",
            FailureReason::ProtocolError => "protocol_error",
            FailureReason::ModelError => "model_error",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// When an episode stops.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationPolicy {
    /// Stop at the first `terminated` (or `truncated`) step. Inflates scores
    /// on environments whose success is transient.
    StopOnTerminated,
    /// Always run to `max_episode_steps`; success is judged at the last step.
    #[default]
    RunToTruncation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub episode_id: String,
    pub task_id: String,
    pub seed: u64,
    pub final_success: bool,
    /// First step at which the success condition held, whatever came after.
    pub transient_success_step: Option<u64>,
    pub steps_executed: u64,
    pub failure_reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
    pub wall_time_s: f64,
    /// Observation messages sent, including the one after the last step.
    pub obs_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_progress: Option<u32>,
}

impl EpisodeResult {
    /// Result for an episode that never ran.
    pub fn not_run(a: &Assignment, reason: FailureReason, detail: impl Into<String>) -> Self {
        EpisodeResult {
            episode_id: a.episode_id(),
            task_id: a.task_id.clone(),
            seed: a.seed,
            final_success: false,
            transient_success_step: None,
            steps_executed: 0,
            failure_reason: Some(reason),
            failure_detail: Some(detail.into()),
            wall_time_s: 0.0,
            obs_count: 0,
            chain_progress: None,
        }
    }

    pub fn failed(&self) -> bool {
        self.failure_reason.is_some()
    }

    /// Copy with the timing field zeroed, for outcome comparisons.
    pub fn without_timing(&self) -> EpisodeResult {
        EpisodeResult {
            wall_time_s: 0.0,
            ..self.clone()
        }
    }
}
