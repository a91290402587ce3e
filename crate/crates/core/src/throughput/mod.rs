//! Demand/supply tuning: environment demand λ(N) over shard counts, model
//! supply μ(B) over batch sizes, and the operating point that keeps demand
//! under a headroom fraction of supply.

mod measure;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use measure::{measure_lambda, measure_mu, probe_queue, Measured, QueueTrace};

pub const DEFAULT_HEADROOM: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputProfile {
    /// Shards → observations/s.
    pub lambda_samples: BTreeMap<u64, f64>,
    /// Batch size → observations/s.
    pub mu_samples: BTreeMap<u64, f64>,
    pub measurement_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub n_star: u64,
    pub b_star: u64,
    /// λ(N*) / μ(B*).
    pub utilization: f64,
    pub headroom: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ThroughputError {
    #[error("invalid throughput profile: {0}")]
    InvalidProfile(String),
    #[error("headroom must lie in (0, 1), got {0}")]
    InvalidHeadroom(f64),
    #[error("no sampled λ(N) is below {limit:.3} obs/s (headroom × μ(B*)); smallest demand is {min_lambda:.3}")]
    NoFeasiblePoint { limit: f64, min_lambda: f64 },
}

impl ThroughputProfile {
    pub fn new(lambda: &[(u64, f64)], mu: &[(u64, f64)], measurement_duration_s: f64) -> Self {
        ThroughputProfile {
            lambda_samples: lambda.iter().copied().collect(),
            mu_samples: mu.iter().copied().collect(),
            measurement_duration_s,
        }
    }

    pub fn validate(&self) -> Result<(), ThroughputError> {
        let bad = |m: &str| Err(ThroughputError::InvalidProfile(m.into()));
        if self.lambda_samples.is_empty() || self.mu_samples.is_empty() {
            return bad("need at least one λ and one μ sample");
        }
        let positive = |v: &f64| v.is_finite() && *v > 0.0;
        if !self.lambda_samples.values().all(positive) || !self.mu_samples.values().all(positive) {
            return bad("all rates must be finite and positive");
        }
        Ok(())
    }

    /// Plot-ready CSV with one row per sample of either curve.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("curve,x,obs_per_s\n");
        for (n, l) in &self.lambda_samples {
            s.push_str(&format!("lambda,{n},{l}\n"));
        }
        for (b, m) in &self.mu_samples {
            s.push_str(&format!("mu,{b},{m}\n"));
        }
        s
    }
}

/// B* maximizes μ (smallest B on ties); N* maximizes λ subject to
/// λ(N) < headroom·μ(B*) (smallest N on ties).
pub fn select_operating_point(profile: &ThroughputProfile, headroom: f64) -> Result<OperatingPoint, ThroughputError> {
    profile.validate()?;
    if !(headroom > 0.0 && headroom < 1.0) {
        return Err(ThroughputError::InvalidHeadroom(headroom));
    }
    let mut best_b: Option<(u64, f64)> = None;
    for (&b, &mu) in &profile.mu_samples {
        if best_b.is_none_or(|(_, m)| mu > m) {
            best_b = Some((b, mu));
        }
    }
    let (b_star, mu_star) = best_b.expect("validated nonempty");
    let limit = headroom * mu_star;
    let mut best_n: Option<(u64, f64)> = None;
    for (&n, &lambda) in &profile.lambda_samples {
        if lambda < limit && best_n.is_none_or(|(_, l)| lambda > l) {
            best_n = Some((n, lambda));
        }
    }
    let (n_star, lambda_star) = best_n.ok_or_else(|| ThroughputError::NoFeasiblePoint {
        limit,
        min_lambda: profile.lambda_samples.values().copied().fold(f64::INFINITY, f64::min),
    })?;
    Ok(OperatingPoint {
        n_star,
        b_star,
        utilization: lambda_star / mu_star,
        headroom,
    })
}

/// `total_episodes × mean_steps / λ(N*)`, in seconds.
pub fn project_wall_time(total_episodes: u64, mean_steps: f64, op: &OperatingPoint, profile: &ThroughputProfile) -> f64 {
    let lambda = profile.lambda_samples[&op.n_star];
    total_episodes as f64 * mean_steps / lambda
}
