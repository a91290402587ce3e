use std::collections::BTreeSet;

use super::{BenchError, Benchmark, StepResult, TaskSpec};
use crate::model_server::ObservationPayload;

/// Wraps a benchmark and crashes on a schedule: an episode reset with a seed
/// in `crash_seeds` fails on the step after `crash_at_step` successful steps.
pub struct FaultInjection<B> {
    inner: B,
    crash_seeds: BTreeSet<u64>,
    crash_at_step: u64,
    armed: bool,
    steps: u64,
}

impl<B: Benchmark> FaultInjection<B> {
    pub fn new(inner: B, crash_seeds: impl IntoIterator<Item = u64>, crash_at_step: u64) -> Self {
        FaultInjection {
            inner,
            crash_seeds: crash_seeds.into_iter().collect(),
            crash_at_step,
            armed: false,
            steps: 0,
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: Benchmark> Benchmark for FaultInjection<B> {
    fn tasks(&self) -> &[TaskSpec] {
        self.inner.tasks()
    }

    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }

    fn reset(&mut self, task_id: &str, seed: u64) -> Result<ObservationPayload, BenchError> {
        let obs = self.inner.reset(task_id, seed)?;
        self.armed = self.crash_seeds.contains(&seed);
        self.steps = 0;
        Ok(obs)
    }

    fn step(&mut self, action: &[f64]) -> Result<(), BenchError> {
        if self.armed && self.steps >= self.crash_at_step {
            return Err(BenchError::EnvCrash(format!(
                "injected fault at step {}",
                self.steps + 1
            )));
        }
        self.inner.step(action)?;
        self.steps += 1;
        Ok(())
    }

    fn make_obs(&self) -> Result<ObservationPayload, BenchError> {
        self.inner.make_obs()
    }

    fn get_step_result(&self) -> Result<StepResult, BenchError> {
        self.inner.get_step_result()
    }

    fn chained_subtask_progress(&self) -> Option<u32> {
        self.inner.chained_subtask_progress()
    }
}
