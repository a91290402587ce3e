use std::time::{Duration, Instant};

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::CostMode;
use super::render::render_scene;
use super::{BenchError, Benchmark, NormalizationStats, StepResult, TaskSpec};
use crate::model_server::ObservationPayload;
use crate::payload;
use crate::util::{fnv1a64, mix64};

/// Sub-goals per chained episode.
pub const NUM_SUBGOALS: usize = 5;
/// Half-width of the cube the transient-success agent is confined to.
pub const WORKSPACE_LIMIT: f64 = 0.6;
/// Height a toppled block comes to rest at, out of the agent's reach.
pub const FLOOR_Z: f64 = -1.0;

/// Knobs shared by every synthetic environment.
#[derive(Debug, Clone)]
pub struct EnvSettings {
    /// Per-axis displacement clip per step.
    pub max_step: f64,
    pub step_cost: Duration,
    pub cost_mode: CostMode,
    pub extra_state_dims: usize,
    pub action_dim: usize,
    pub normalize: bool,
    pub stats: Option<NormalizationStats>,
}

impl Default for EnvSettings {
    fn default() -> Self {
        EnvSettings {
            max_step: 0.05,
            step_cost: Duration::ZERO,
            cost_mode: CostMode::Sleep,
            extra_state_dims: 0,
            action_dim: 7,
            normalize: false,
            stats: None,
        }
    }
}

impl EnvSettings {
    fn burn_step_cost(&self) {
        if self.step_cost.is_zero() {
            return;
        }
        match self.cost_mode {
            CostMode::Sleep => std::thread::sleep(self.step_cost),
            CostMode::Spin => {
                let until = Instant::now() + self.step_cost;
                while Instant::now() < until {
                    std::hint::spin_loop();
                }
            }
        }
    }

    fn finish_states(&self, raw: Vec<f64>) -> Result<Vec<f64>, BenchError> {
        if !self.normalize {
            return Ok(raw);
        }
        let stats = self.stats.as_ref().ok_or(BenchError::MissingNormalizationStats)?;
        if stats.dim() != raw.len() {
            return Err(BenchError::EnvCrash(format!(
                "normalization stats have {} dims but the state has {}",
                stats.dim(),
                raw.len()
            )));
        }
        Ok(stats.normalize(&raw))
    }

    fn check_action(&self, action: &[f64]) -> Result<[f64; 3], BenchError> {
        if action.len() != self.action_dim {
            return Err(BenchError::BadActionShape {
                expected: self.action_dim,
                got: action.len(),
            });
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(BenchError::NonFiniteAction);
        }
        let clip = |a: f64| a.clamp(-self.max_step, self.max_step);
        Ok([clip(action[0]), clip(action[1]), clip(action[2])])
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn uniform3(rng: &mut ChaCha8Rng, half: f64) -> [f64; 3] {
    [
        rng.random_range(-half..half),
        rng.random_range(-half..half),
        rng.random_range(-half..half),
    ]
}

/// State common to the reach-style environments.
#[derive(Debug, Clone)]
struct Episode {
    task: TaskSpec,
    pos: [f64; 3],
    goal: [f64; 3],
    steps: u64,
    scene: Vec<f64>,
}

impl Episode {
    fn start(tasks: &[TaskSpec], task_id: &str, seed: u64, extra_dims: usize) -> Result<(Self, ChaCha8Rng), BenchError> {
        let task = tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| BenchError::UnknownTask(task_id.to_owned()))?
            .clone();
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ fnv1a64(task_id.as_bytes())));
        let goal = uniform3(&mut rng, 0.5);
        let scene = (0..extra_dims).map(|_| rng.random_range(-1.0..1.0)).collect();
        let ep = Episode {
            task,
            pos: [0.0; 3],
            goal,
            steps: 0,
            scene,
        };
        Ok((ep, rng))
    }

    fn displacement(&self, target: [f64; 3]) -> [f64; 3] {
        [target[0] - self.pos[0], target[1] - self.pos[1], target[2] - self.pos[2]]
    }

    /// `[target - pos (3), pos (3), middle.., scene..]`
    fn raw_states(&self, target: [f64; 3], middle: &[f64]) -> Vec<f64> {
        let mut s = Vec::with_capacity(6 + middle.len() + self.scene.len());
        s.extend(self.displacement(target));
        s.extend(self.pos);
        s.extend_from_slice(middle);
        s.extend_from_slice(&self.scene);
        s
    }

    fn observe(&self, settings: &EnvSettings, target: Option<[f64; 3]>, middle: &[f64]) -> Result<ObservationPayload, BenchError> {
        let states = settings.finish_states(self.raw_states(target.unwrap_or(self.pos), middle))?;
        let mut obs = ObservationPayload {
            states,
            task_description: self.task.task_description.clone(),
            ..Default::default()
        };
        obs.images.insert("agentview".into(), render_scene(self.pos, target));
        Ok(obs)
    }

    fn truncated(&self) -> bool {
        self.steps >= self.task.max_episode_steps
    }
}

/// Point-reach: `pos <- pos + clip(action[0..3], ±max_step)`; success when
/// within `success_tolerance` of the seeded goal. Action entries past the
/// third are accepted and ignored.
pub struct PointReach {
    tasks: Vec<TaskSpec>,
    settings: EnvSettings,
    episode: Option<Episode>,
}

impl PointReach {
    pub fn new(tasks: Vec<TaskSpec>, settings: EnvSettings) -> Self {
        PointReach {
            tasks,
            settings,
            episode: None,
        }
    }

    pub fn position(&self) -> Option<[f64; 3]> {
        self.episode.as_ref().map(|e| e.pos)
    }

    pub fn goal(&self) -> Option<[f64; 3]> {
        self.episode.as_ref().map(|e| e.goal)
    }
}

impl Benchmark for PointReach {
    fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    fn action_dim(&self) -> usize {
        self.settings.action_dim
    }

    fn state_dim(&self) -> usize {
        6 + self.settings.extra_state_dims
    }

    fn reset(&mut self, task_id: &str, seed: u64) -> Result<ObservationPayload, BenchError> {
        let (ep, _) = Episode::start(&self.tasks, task_id, seed, self.settings.extra_state_dims)?;
        self.episode = Some(ep);
        self.make_obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<(), BenchError> {
        let delta = self.settings.check_action(action)?;
        let ep = self.episode.as_mut().ok_or(BenchError::NoActiveEpisode)?;
        self.settings.burn_step_cost();
        for (p, d) in ep.pos.iter_mut().zip(delta) {
            *p += d;
        }
        ep.steps += 1;
        Ok(())
    }

    fn make_obs(&self) -> Result<ObservationPayload, BenchError> {
        let ep = self.episode.as_ref().ok_or(BenchError::NoActiveEpisode)?;
        ep.observe(&self.settings, Some(ep.goal), &[])
    }

    fn get_step_result(&self) -> Result<StepResult, BenchError> {
        let ep = self.episode.as_ref().ok_or(BenchError::NoActiveEpisode)?;
        if ep.steps == 0 {
            return Err(BenchError::NotStepped);
        }
        let d = distance(ep.pos, ep.goal);
        let success = d <= ep.task.success_tolerance;
        Ok(StepResult {
            obs: self.make_obs()?,
            terminated: success,
            truncated: ep.truncated(),
            success_event: success,
            info: payload! {"distance" => d, "step" => ep.steps},
        })
    }
}

/// Point-reach whose success does not last: `stable_steps` after the agent
/// first reaches the block, the block topples to `FLOOR_Z`, below the
/// workspace the agent is confined to. `terminated` still fires on the
/// momentary success.
pub struct TransientReach {
    tasks: Vec<TaskSpec>,
    settings: EnvSettings,
    stable_steps: u64,
    episode: Option<Episode>,
    first_contact: Option<u64>,
    toppled: bool,
}

impl TransientReach {
    pub fn new(tasks: Vec<TaskSpec>, settings: EnvSettings, stable_steps: u64) -> Self {
        TransientReach {
            tasks,
            settings,
            stable_steps: stable_steps.max(1),
            episode: None,
            first_contact: None,
            toppled: false,
        }
    }

    pub fn toppled(&self) -> bool {
        self.toppled
    }

    pub fn goal(&self) -> Option<[f64; 3]> {
        self.episode.as_ref().map(|e| e.goal)
    }
}

impl Benchmark for TransientReach {
    fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    fn action_dim(&self) -> usize {
        self.settings.action_dim
    }

    fn state_dim(&self) -> usize {
        6 + self.settings.extra_state_dims
    }

    fn reset(&mut self, task_id: &str, seed: u64) -> Result<ObservationPayload, BenchError> {
        let (ep, _) = Episode::start(&self.tasks, task_id, seed, self.settings.extra_state_dims)?;
        self.episode = Some(ep);
        self.first_contact = None;
        self.toppled = false;
        self.make_obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<(), BenchError> {
        let delta = self.settings.check_action(action)?;
        let ep = self.episode.as_mut().ok_or(BenchError::NoActiveEpisode)?;
        self.settings.burn_step_cost();
        for (p, d) in ep.pos.iter_mut().zip(delta) {
            *p = (*p + d).clamp(-WORKSPACE_LIMIT, WORKSPACE_LIMIT);
        }
        ep.steps += 1;
        match self.first_contact {
            Some(t) if !self.toppled && ep.steps >= t + self.stable_steps => {
                ep.goal[2] = FLOOR_Z;
                self.toppled = true;
            }
            None if distance(ep.pos, ep.goal) <= ep.task.success_tolerance => {
                self.first_contact = Some(ep.steps);
            }
            _ => {}
        }
        Ok(())
    }

    fn make_obs(&self) -> Result<ObservationPayload, BenchError> {
        let ep = self.episode.as_ref().ok_or(BenchError::NoActiveEpisode)?;
        ep.observe(&self.settings, Some(ep.goal), &[])
    }

    fn get_step_result(&self) -> Result<StepResult, BenchError> {
        let ep = self.episode.as_ref().ok_or(BenchError::NoActiveEpisode)?;
        if ep.steps == 0 {
            return Err(BenchError::NotStepped);
        }
        let d = distance(ep.pos, ep.goal);
        let success = d <= ep.task.success_tolerance;
        Ok(StepResult {
            obs: self.make_obs()?,
            terminated: success,
            truncated: ep.truncated(),
            success_event: success,
            info: payload! {"distance" => d, "step" => ep.steps, "toppled" => self.toppled},
        })
    }
}

/// Number of leading sub-goals completed; the first miss freezes the count.
pub fn chain_progress(outcomes: &[Option<bool>]) -> u32 {
    outcomes.iter().take_while(|o| **o == Some(true)).count() as u32
}

/// Five seeded sub-goals attempted in order. Each gets a budget of
/// `max_episode_steps / 5` steps; running out marks it failed and moves on.
/// The active sub-goal index is exposed as `states[6]`.
pub struct ChainReach {
    tasks: Vec<TaskSpec>,
    settings: EnvSettings,
    episode: Option<Episode>,
    subgoals: [[f64; 3]; NUM_SUBGOALS],
    outcomes: [Option<bool>; NUM_SUBGOALS],
    active: usize,
    active_since: u64,
}

impl ChainReach {
    pub fn new(tasks: Vec<TaskSpec>, settings: EnvSettings) -> Self {
        ChainReach {
            tasks,
            settings,
            episode: None,
            subgoals: [[0.0; 3]; NUM_SUBGOALS],
            outcomes: [None; NUM_SUBGOALS],
            active: 0,
            active_since: 0,
        }
    }

    pub fn outcomes(&self) -> [Option<bool>; NUM_SUBGOALS] {
        self.outcomes
    }

    pub fn subgoals(&self) -> [[f64; 3]; NUM_SUBGOALS] {
        self.subgoals
    }

    pub fn active_subgoal(&self) -> usize {
        self.active
    }

    fn budget(task: &TaskSpec) -> u64 {
        (task.max_episode_steps / NUM_SUBGOALS as u64).max(1)
    }

    fn target(&self) -> Option<[f64; 3]> {
        (self.active < NUM_SUBGOALS).then(|| self.subgoals[self.active])
    }
}

impl Benchmark for ChainReach {
    fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    fn action_dim(&self) -> usize {
        self.settings.action_dim
    }

    fn state_dim(&self) -> usize {
        7 + self.settings.extra_state_dims
    }

    fn reset(&mut self, task_id: &str, seed: u64) -> Result<ObservationPayload, BenchError> {
        let (mut ep, mut rng) = Episode::start(&self.tasks, task_id, seed, self.settings.extra_state_dims)?;
        self.subgoals[0] = ep.goal;
        for g in self.subgoals.iter_mut().skip(1) {
            *g = uniform3(&mut rng, 0.5);
        }
        ep.goal = self.subgoals[0];
        self.episode = Some(ep);
        self.outcomes = [None; NUM_SUBGOALS];
        self.active = 0;
        self.active_since = 0;
        self.make_obs()
    }

    fn step(&mut self, action: &[f64]) -> Result<(), BenchError> {
        let delta = self.settings.check_action(action)?;
        let ep = self.episode.as_mut().ok_or(BenchError::NoActiveEpisode)?;
        self.settings.burn_step_cost();
        for (p, d) in ep.pos.iter_mut().zip(delta) {
            *p += d;
        }
        ep.steps += 1;
        if self.active < NUM_SUBGOALS {
            let reached = distance(ep.pos, self.subgoals[self.active]) <= ep.task.success_tolerance;
            let expired = ep.steps - self.active_since >= Self::budget(&ep.task);
            if reached || expired {
                self.outcomes[self.active] = Some(reached);
                self.active += 1;
                self.active_since = ep.steps;
                if self.active < NUM_SUBGOALS {
                    ep.goal = self.subgoals[self.active];
                }
            }
        }
        Ok(())
    }

    fn make_obs(&self) -> Result<ObservationPayload, BenchError> {
        let ep = self.episode.as_ref().ok_or(BenchError::NoActiveEpisode)?;
        ep.observe(&self.settings, self.target(), &[self.active as f64])
    }

    fn get_step_result(&self) -> Result<StepResult, BenchError> {
        let ep = self.episode.as_ref().ok_or(BenchError::NoActiveEpisode)?;
        if ep.steps == 0 {
            return Err(BenchError::NotStepped);
        }
        let progress = chain_progress(&self.outcomes);
        let complete = progress as usize == NUM_SUBGOALS;
        Ok(StepResult {
            obs: self.make_obs()?,
            terminated: complete,
            truncated: ep.truncated(),
            success_event: complete,
            info: payload! {"step" => ep.steps, "chain_progress" => progress as u64},
        })
    }

    fn chained_subtask_progress(&self) -> Option<u32> {
        Some(chain_progress(&self.outcomes))
    }
}
