use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{ActionChunk, ObservationPayload, PredictContext};
use crate::{par, util};

pub const DEFAULT_ACTION_DIM: usize = 7;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("model failure: {0}")]
pub struct ModelFailure(pub String);

pub type PredictInput = (ObservationPayload, PredictContext);

/// A policy behind the blocking predict contract.
///
/// Implementations must be deterministic in `(obs, ctx)` for the batch and
/// sequential paths to agree.
pub trait Policy: Send + Sync {
    fn action_dim(&self) -> usize;

    fn predict(&self, obs: &ObservationPayload, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure>;

    /// Element `i` of the result answers `batch[i]`. A failing element does
    /// not affect the others.
    fn predict_batch(&self, batch: &[PredictInput]) -> Vec<Result<ActionChunk, ModelFailure>> {
        par::map(batch, |(obs, ctx)| self.predict(obs, ctx))
    }
}

fn chunk(rows: Vec<Vec<f64>>, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure> {
    ActionChunk::from_rows(rows, ctx.obs_step).map_err(|e| ModelFailure(e.to_string()))
}

fn displacement(obs: &ObservationPayload) -> Result<[f64; 3], ModelFailure> {
    match obs.states.get(0..3) {
        Some(s) => Ok([s[0], s[1], s[2]]),
        None => Err(ModelFailure(format!(
            "expected at least 3 state entries (goal - position), got {}",
            obs.states.len()
        ))),
    }
}

/// Open-loop rollout of a proportional controller: row `j` is
/// `gain * (1 - gain)^j * e` on the translation axes, zeros elsewhere.
fn proportional_rows(e: [f64; 3], gain: f64, horizon: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..horizon)
        .map(|j| {
            let scale = gain * (1.0 - gain).powi(j as i32);
            let mut row = vec![0.0; dim];
            for (r, x) in row.iter_mut().zip(e) {
                *r = scale * x;
            }
            row
        })
        .collect()
}

/// Drives the first three state entries (goal minus position) to zero.
#[derive(Debug, Clone)]
pub struct Proportional {
    pub gain: f64,
    pub horizon: usize,
    pub action_dim: usize,
}

impl Policy for Proportional {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict(&self, obs: &ObservationPayload, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure> {
        let e = displacement(obs)?;
        chunk(proportional_rows(e, self.gain, self.horizon, self.action_dim), ctx)
    }
}

/// Emits the same action for every row regardless of input.
#[derive(Debug, Clone)]
pub struct Constant {
    pub action: Vec<f64>,
    pub horizon: usize,
}

impl Policy for Constant {
    fn action_dim(&self) -> usize {
        self.action.len()
    }

    fn predict(&self, _obs: &ObservationPayload, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure> {
        chunk(vec![self.action.clone(); self.horizon], ctx)
    }
}

/// Replays a recorded trajectory indexed by episode step; the last row is
/// held once the recording runs out.
#[derive(Debug, Clone)]
pub struct Replay {
    pub trajectory: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl Policy for Replay {
    fn action_dim(&self) -> usize {
        self.trajectory.first().map_or(0, Vec::len)
    }

    fn predict(&self, _obs: &ObservationPayload, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure> {
        let last = self
            .trajectory
            .len()
            .checked_sub(1)
            .ok_or_else(|| ModelFailure("empty trajectory".into()))?;
        let rows = (0..self.horizon)
            .map(|j| {
                let i = (ctx.obs_step as usize).saturating_add(j).min(last);
                self.trajectory[i].clone()
            })
            .collect();
        chunk(rows, ctx)
    }
}

/// Chained-task script: for each sub-goal it decides once, from a hash of
/// `(seed, episode_id, subtask)`, whether to pursue it (with probability
/// `subtask_success_prob[i]`) or to idle until the sub-goal budget expires.
///
/// Reads the active sub-goal index from `states[6]`.
#[derive(Debug, Clone)]
pub struct ChainScript {
    pub gain: f64,
    pub subtask_success_prob: Vec<f64>,
    pub seed: u64,
    pub horizon: usize,
    pub action_dim: usize,
}

impl ChainScript {
    pub fn pursues(&self, episode_id: &str, subtask: usize) -> bool {
        let p = self.subtask_success_prob.get(subtask).copied().unwrap_or(0.0);
        let h = util::mix64(self.seed ^ util::fnv1a64(episode_id.as_bytes()) ^ util::mix64(subtask as u64));
        util::unit_interval(h) < p
    }
}

impl Policy for ChainScript {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict(&self, obs: &ObservationPayload, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure> {
        let e = displacement(obs)?;
        let active = obs
            .states
            .get(6)
            .copied()
            .ok_or_else(|| ModelFailure("chain script needs the active sub-goal index in states[6]".into()))?;
        let pursue = active >= 0.0 && self.pursues(&ctx.episode_id, active as usize);
        let gain = if pursue { self.gain } else { 0.0 };
        chunk(proportional_rows(e, gain, self.horizon, self.action_dim), ctx)
    }
}

/// Wraps another policy with a per-batch latency `base + per_item * B`.
pub struct Slow {
    pub inner: Arc<dyn Policy>,
    pub base: Duration,
    pub per_item: Duration,
}

impl Slow {
    pub fn latency(&self, batch_size: usize) -> Duration {
        self.base + self.per_item * batch_size as u32
    }
}

impl Policy for Slow {
    fn action_dim(&self) -> usize {
        self.inner.action_dim()
    }

    fn predict(&self, obs: &ObservationPayload, ctx: &PredictContext) -> Result<ActionChunk, ModelFailure> {
        let start = Instant::now();
        let out = self.inner.predict(obs, ctx);
        sleep_until(start + self.latency(1));
        out
    }

    fn predict_batch(&self, batch: &[PredictInput]) -> Vec<Result<ActionChunk, ModelFailure>> {
        let start = Instant::now();
        let out = self.inner.predict_batch(batch);
        sleep_until(start + self.latency(batch.len()));
        out
    }
}

pub(crate) fn sleep_until(deadline: Instant) {
    let now = Instant::now();
    if deadline > now {
        std::thread::sleep(deadline - now);
    }
}

fn default_gain() -> f64 {
    0.5
}

fn default_action_dim() -> usize {
    DEFAULT_ACTION_DIM
}

/// Config-file policy selection: `{name: ..., params: {...}}`. `params`
/// may be omitted when every parameter has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(remote = "Self", tag = "name", content = "params", rename_all = "snake_case", deny_unknown_fields)]
pub enum PolicyConfig {
    Proportional {
        #[serde(default = "default_gain")]
        gain: f64,
        #[serde(default = "default_action_dim")]
        action_dim: usize,
    },
    Constant {
        action: Vec<f64>,
    },
    /// Zero-latency all-zeros action source.
    Echo {
        #[serde(default = "default_action_dim")]
        action_dim: usize,
    },
    Replay {
        trajectory: Vec<Vec<f64>>,
    },
    ChainScript {
        #[serde(default = "default_gain")]
        gain: f64,
        subtask_success_prob: Vec<f64>,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_action_dim")]
        action_dim: usize,
    },
    Slow {
        base_ms: f64,
        per_item_ms: f64,
        inner: Box<PolicyConfig>,
    },
}

impl Serialize for PolicyConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        PolicyConfig::serialize(self, s)
    }
}

impl<'de> Deserialize<'de> for PolicyConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let mut v = serde_json::Value::deserialize(d)?;
        if let Some(map) = v.as_object_mut() {
            map.entry("params").or_insert_with(|| serde_json::Value::Object(Default::default()));
        }
        PolicyConfig::deserialize(v).map_err(D::Error::custom)
    }
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig::Proportional {
            gain: default_gain(),
            action_dim: DEFAULT_ACTION_DIM,
        }
    }
}

impl PolicyConfig {
    /// The `name` tag used in config files.
    pub fn name(&self) -> &'static str {
        match self {
            PolicyConfig::Proportional { .. } => "proportional",
            PolicyConfig::Constant { .. } => "constant",
            PolicyConfig::Echo { .. } => "echo",
            PolicyConfig::Replay { .. } => "replay",
            PolicyConfig::ChainScript { .. } => "chain_script",
            PolicyConfig::Slow { .. } => "slow",
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match self {
            PolicyConfig::Proportional { gain, action_dim } | PolicyConfig::ChainScript { gain, action_dim, .. } => {
                if !gain.is_finite() {
                    return Err("gain must be finite".into());
                }
                if *action_dim < 3 {
                    return Err("action_dim must be at least 3".into());
                }
                if let PolicyConfig::ChainScript { subtask_success_prob, .. } = self {
                    if subtask_success_prob.iter().any(|p| !(0.0..=1.0).contains(p)) {
                        return Err("subtask_success_prob entries must lie in [0, 1]".into());
                    }
                }
                Ok(())
            }
            PolicyConfig::Constant { action } => {
                if action.is_empty() || action.iter().any(|x| !x.is_finite()) {
                    Err("constant action must be a nonempty finite vector".into())
                } else {
                    Ok(())
                }
            }
            PolicyConfig::Echo { action_dim } => {
                if *action_dim == 0 {
                    Err("action_dim must be positive".into())
                } else {
                    Ok(())
                }
            }
            PolicyConfig::Replay { trajectory } => {
                let Some(first) = trajectory.first() else {
                    return Err("replay trajectory is empty".into());
                };
                if first.is_empty() || trajectory.iter().any(|r| r.len() != first.len()) {
                    return Err("replay rows must share a positive width".into());
                }
                if trajectory.iter().flatten().any(|x| !x.is_finite()) {
                    return Err("replay entries must be finite".into());
                }
                Ok(())
            }
            PolicyConfig::Slow { base_ms, per_item_ms, inner } => {
                if !(base_ms.is_finite() && *base_ms >= 0.0 && per_item_ms.is_finite() && *per_item_ms >= 0.0) {
                    return Err("latency terms must be finite and non-negative".into());
                }
                inner.validate()
            }
        }
    }

    pub fn build(&self, horizon: usize) -> Arc<dyn Policy> {
        match self {
            PolicyConfig::Proportional { gain, action_dim } => Arc::new(Proportional {
                gain: *gain,
                horizon,
                action_dim: *action_dim,
            }),
            PolicyConfig::Constant { action } => Arc::new(Constant {
                action: action.clone(),
                horizon,
            }),
            PolicyConfig::Echo { action_dim } => Arc::new(Constant {
                action: vec![0.0; *action_dim],
                horizon,
            }),
            PolicyConfig::Replay { trajectory } => Arc::new(Replay {
                trajectory: trajectory.clone(),
                horizon,
            }),
            PolicyConfig::ChainScript {
                gain,
                subtask_success_prob,
                seed,
                action_dim,
            } => Arc::new(ChainScript {
                gain: *gain,
                subtask_success_prob: subtask_success_prob.clone(),
                seed: *seed,
                horizon,
                action_dim: *action_dim,
            }),
            PolicyConfig::Slow {
                base_ms,
                per_item_ms,
                inner,
            } => Arc::new(Slow {
                inner: inner.build(horizon),
                base: Duration::from_secs_f64(base_ms / 1e3),
                per_item: Duration::from_secs_f64(per_item_ms / 1e3),
            }),
        }
    }
}
