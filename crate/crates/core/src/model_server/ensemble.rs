use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::ActionChunk;

pub const DEFAULT_EMA_ALPHA: f64 = 0.5;

/// How overlapping chunk predictions for the current step are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EnsembleSpec", into = "EnsembleSpec")]
pub enum EnsembleStrategy {
    Newest,
    Average,
    Ema { alpha: f64 },
}

impl Default for EnsembleStrategy {
    fn default() -> Self {
        EnsembleStrategy::Newest
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Newest,
    Average,
    Ema,
}

/// Config-file shape: `{kind: ema, alpha: 0.5}`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

impl TryFrom<EnsembleSpec> for EnsembleStrategy {
    type Error = String;

    fn try_from(spec: EnsembleSpec) -> Result<Self, String> {
        match (spec.kind, spec.alpha) {
            (EnsembleKind::Newest, None) => Ok(EnsembleStrategy::Newest),
            (EnsembleKind::Average, None) => Ok(EnsembleStrategy::Average),
            (EnsembleKind::Ema, alpha) => {
                let alpha = alpha.unwrap_or(DEFAULT_EMA_ALPHA);
                if alpha > 0.0 && alpha <= 1.0 {
                    Ok(EnsembleStrategy::Ema { alpha })
                } else {
                    Err(format!("ema alpha must lie in (0, 1], got {alpha}"))
                }
            }
            (kind, Some(_)) => Err(format!("alpha is only valid for kind ema, not {kind:?}")),
        }
    }
}

impl From<EnsembleStrategy> for EnsembleSpec {
    fn from(s: EnsembleStrategy) -> Self {
        match s {
            EnsembleStrategy::Newest => EnsembleSpec { kind: EnsembleKind::Newest, alpha: None },
            EnsembleStrategy::Average => EnsembleSpec { kind: EnsembleKind::Average, alpha: None },
            EnsembleStrategy::Ema { alpha } => EnsembleSpec {
                kind: EnsembleKind::Ema,
                alpha: Some(alpha),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnsembleError {
    #[error("no buffered chunk covers step {0}")]
    EmptyBuffer(u64),
    #[error("chunk issued at step {issued} pushed while buffer is at step {current}")]
    StepMismatch { issued: u64, current: u64 },
}

/// Buffered chunks for one episode, newest last.
#[derive(Debug, Clone)]
pub struct ChunkBuffer {
    chunks: VecDeque<ActionChunk>,
    current_step: u64,
    capacity: usize,
}

impl ChunkBuffer {
    /// `capacity` is the most chunks kept at once (at least 1).
    pub fn new(capacity: usize) -> Self {
        ChunkBuffer {
            chunks: VecDeque::new(),
            current_step: 0,
            capacity: capacity.max(1),
        }
    }

    pub fn current_step(&self) -> u64 {
        self.current_step
    }

    pub fn len(&self) -> usize {
        self.chunks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chunks.is_empty()
    }

    pub fn chunks(&self) -> impl Iterator<Item = &ActionChunk> {
        self.chunks.iter()
    }

    pub fn clear(&mut self) {
        self.chunks.clear();
        self.current_step = 0;
    }

    pub fn push_chunk(&mut self, chunk: ActionChunk) -> Result<(), EnsembleError> {
        if chunk.issued_step != self.current_step {
            return Err(EnsembleError::StepMismatch {
                issued: chunk.issued_step,
                current: self.current_step,
            });
        }
        self.chunks.push_back(chunk);
        self.evict();
        Ok(())
    }

    /// Moves to the next step and drops chunks that no longer reach it.
    pub fn advance(&mut self) {
        self.current_step += 1;
        self.evict();
    }

    fn evict(&mut self) {
        let step = self.current_step;
        self.chunks.retain(|c| c.issued_step + c.horizon() as u64 > step);
        while self.chunks.len() > self.capacity {
            self.chunks.pop_front();
        }
    }

    /// Rows predicted for the current step, newest chunk first.
    pub fn candidates(&self) -> Vec<&[f64]> {
        self.chunks
            .iter()
            .rev()
            .filter_map(|c| c.row_at_step(self.current_step))
            .collect()
    }
}

/// Combines the candidates for the current step.
///
/// With candidates `a_0` (newest) .. `a_k` (oldest): `Newest` takes `a_0`,
/// `Average` the arithmetic mean, `Ema` the weighted sum with weights
/// proportional to `(1 - alpha)^j`, normalized to sum to one.
pub fn ensemble_action(buf: &ChunkBuffer, strategy: EnsembleStrategy) -> Result<Vec<f64>, EnsembleError> {
    let candidates = buf.candidates();
    let Some(newest) = candidates.first() else {
        return Err(EnsembleError::EmptyBuffer(buf.current_step));
    };
    let weights: Vec<f64> = match strategy {
        EnsembleStrategy::Newest => return Ok(newest.to_vec()),
        EnsembleStrategy::Average => vec![1.0; candidates.len()],
        EnsembleStrategy::Ema { alpha } => (0..candidates.len())
            .map(|j| (1.0 - alpha).powi(j as i32))
            .collect(),
    };
    Ok(weighted_mean(&candidates, &weights))
}

fn weighted_mean(rows: &[&[f64]], weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    let mut out = vec![0.0; rows[0].len()];
    for (row, w) in rows.iter().zip(weights) {
        let w = w / total;
        for (o, x) in out.iter_mut().zip(row.iter()) {
            *o += w * x;
        }
    }
    out
}

/// Normalized EMA weights for `n` candidates, newest first.
pub fn ema_weights(alpha: f64, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|j| (1.0 - alpha).powi(j as i32)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}
