use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::ensemble::EnsembleStrategy;
use super::policy::PolicyConfig;

fn one() -> usize {
    1
}

fn default_max_wait_ms() -> f64 {
    5.0
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8765
}

/// Model-side config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelServerConfig {
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Rows per predicted chunk (T).
    #[serde(default = "one")]
    pub chunk_horizon: usize,
    #[serde(default)]
    pub ensemble: EnsembleStrategy,
    /// Steps between predict calls, 1 ≤ r ≤ T.
    #[serde(default = "one")]
    pub replan_interval: usize,
    #[serde(default = "one")]
    pub max_batch_size: usize,
    #[serde(default = "default_max_wait_ms")]
    pub max_wait_ms: f64,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
}

impl Default for ModelServerConfig {
    fn default() -> Self {
        ModelServerConfig {
            policy: PolicyConfig::default(),
            chunk_horizon: 1,
            ensemble: EnsembleStrategy::default(),
            replan_interval: 1,
            max_batch_size: 1,
            max_wait_ms: default_max_wait_ms(),
            host: default_host(),
            port: default_port(),
        }
    }
}

impl ModelServerConfig {
    /// Returns `(key path, problem)` for the first violated constraint.
    pub fn validate(&self) -> Result<(), (String, String)> {
        let err = |k: &str, m: String| Err((k.to_owned(), m));
        if self.chunk_horizon == 0 {
            return err("chunk_horizon", "must be at least 1".into());
        }
        if self.replan_interval == 0 || self.replan_interval > self.chunk_horizon {
            return err(
                "replan_interval",
                format!("must lie in [1, chunk_horizon = {}]", self.chunk_horizon),
            );
        }
        if self.max_batch_size == 0 {
            return err("max_batch_size", "must be at least 1".into());
        }
        if !(self.max_wait_ms.is_finite() && self.max_wait_ms >= 0.0) {
            return err("max_wait_ms", "must be a non-negative number".into());
        }
        if let Err(m) = self.policy.validate() {
            return err("policy", m);
        }
        Ok(())
    }

    pub fn max_wait(&self) -> Duration {
        Duration::from_secs_f64(self.max_wait_ms / 1e3)
    }

    pub fn bind_addr(&self) -> String {
        format!("{}:{}", self.host, self.port)
    }
}
