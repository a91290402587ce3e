//! Declarative configuration: strict YAML parsing with key-path errors,
//! defaults, content hashing, and persisted result records.

mod record;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::benchmark::{BenchConfigError, BenchmarkConfig};
use crate::model_server::ModelServerConfig;
use crate::runner::RunnerOptions;

pub use record::{read_episodes, ResultRecord, EPISODES_FILE, RESULT_FILE};

pub const HARNESS_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not valid YAML: {0}")]
    Syntax(String),
    #[error("schema violation at {path}: {message}")]
    SchemaViolation { path: String, message: String },
    #[error("normalize=true requires normalization_stats (mean and std per state dimension)")]
    MissingNormalizationStats,
}

fn violation(path: impl Into<String>, message: impl Into<String>) -> ConfigError {
    ConfigError::SchemaViolation {
        path: path.into(),
        message: message.into(),
    }
}

fn default_shards() -> usize {
    1
}

fn default_step_timeout() -> f64 {
    30.0
}

fn default_connect_timeout() -> f64 {
    10.0
}

fn default_endpoint() -> String {
    "ws://127.0.0.1:8765".into()
}

fn default_headroom() -> f64 {
    crate::throughput::DEFAULT_HEADROOM
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_shards")]
    pub shards: usize,
    #[serde(default = "default_step_timeout")]
    pub step_timeout_s: f64,
    #[serde(default = "default_connect_timeout")]
    pub connect_timeout_s: f64,
    #[serde(default = "default_endpoint")]
    pub server_endpoint: String,
    /// Utilization ceiling used by `tune` when picking N and B.
    #[serde(default = "default_headroom")]
    pub headroom: f64,
    /// When set, `run` exits 0 even if some episodes hit infrastructure
    /// failures.
    #[serde(default)]
    pub allow_infra_failures: bool,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            shards: default_shards(),
            step_timeout_s: default_step_timeout(),
            connect_timeout_s: default_connect_timeout(),
            server_endpoint: default_endpoint(),
            headroom: default_headroom(),
            allow_infra_failures: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Free-form label of the environment image the run used.
    #[serde(default)]
    pub image_tag: String,
    /// Hex SHA-256 of the canonical config; filled in by the parser.
    #[serde(default)]
    pub config_hash: String,
}

/// Benchmark-plus-run config file. The benchmark keys sit at top level next
/// to the `run` and `provenance` sections.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub benchmark: BenchmarkConfig,
    pub run: RunSection,
    pub provenance: Provenance,
}

impl EvalConfig {
    /// Wraps an in-memory benchmark config with default run settings and
    /// computes the hash.
    pub fn new(benchmark: BenchmarkConfig, run: RunSection) -> Result<Self, ConfigError> {
        let mut cfg = EvalConfig {
            benchmark,
            run,
            provenance: Provenance::default(),
        };
        cfg.finish()?;
        Ok(cfg)
    }

    pub fn runner_options(&self) -> RunnerOptions {
        RunnerOptions {
            termination: self.benchmark.termination_policy,
            step_timeout: Duration::from_secs_f64(self.run.step_timeout_s),
            connect_timeout: Duration::from_secs_f64(self.run.connect_timeout_s),
        }
    }

    pub fn config_hash(&self) -> &str {
        &self.provenance.config_hash
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(&self.benchmark).expect("benchmark config serializes");
        let map = v.as_object_mut().expect("benchmark config is a map");
        map.insert("run".into(), serde_json::to_value(&self.run).expect("run section serializes"));
        map.insert(
            "provenance".into(),
            serde_json::to_value(&self.provenance).expect("provenance serializes"),
        );
        v
    }

    pub fn to_yaml(&self) -> String {
        serde_yaml::to_string(&self.to_json()).expect("config serializes to YAML")
    }

    /// Validates, then recomputes the hash. A hash already present must agree.
    fn finish(&mut self) -> Result<(), ConfigError> {
        validate_run(&self.run)?;
        self.benchmark.validate().map_err(|e| match e {
            BenchConfigError::MissingNormalizationStats => ConfigError::MissingNormalizationStats,
            BenchConfigError::Invalid { path, message } => violation(path, message),
        })?;
        let claimed = std::mem::take(&mut self.provenance.config_hash);
        let hash = content_hash(&self.to_json());
        if !claimed.is_empty() && claimed != hash {
            return Err(violation(
                "provenance.config_hash",
                format!("recorded hash {claimed} does not match the content hash {hash}"),
            ));
        }
        self.provenance.config_hash = hash;
        Ok(())
    }

    fn from_sections(root: serde_json::Value) -> Result<Self, ConfigError> {
        let (bench, run, prov) = split_sections(root)?;
        let mut cfg = EvalConfig {
            benchmark: bench,
            run,
            provenance: prov,
        };
        cfg.finish()?;
        Ok(cfg)
    }
}

impl Serialize for EvalConfig {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for EvalConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = serde_json::Value::deserialize(d)?;
        EvalConfig::from_sections(v).map_err(serde::de::Error::custom)
    }
}

fn validate_run(run: &RunSection) -> Result<(), ConfigError> {
    if run.shards == 0 {
        return Err(violation("run.shards", "must be at least 1"));
    }
    if !(run.step_timeout_s.is_finite() && run.step_timeout_s > 0.0) {
        return Err(violation("run.step_timeout_s", "must be positive"));
    }
    if !(run.connect_timeout_s.is_finite() && run.connect_timeout_s > 0.0) {
        return Err(violation("run.connect_timeout_s", "must be positive"));
    }
    if !run.server_endpoint.starts_with("ws://") {
        return Err(violation("run.server_endpoint", "must be a ws://host:port URL"));
    }
    if !(run.headroom > 0.0 && run.headroom < 1.0) {
        return Err(violation("run.headroom", "must lie in (0, 1)"));
    }
    Ok(())
}

fn typed<T: DeserializeOwned>(prefix: &str, v: serde_json::Value) -> Result<T, ConfigError> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let inner = e.path().to_string();
        let path = match (prefix.is_empty(), inner.as_str()) {
            (true, _) => inner.clone(),
            (false, ".") => prefix.to_owned(),
            (false, _) => format!("{prefix}.{inner}"),
        };
        violation(path, e.into_inner().to_string())
    })
}

fn split_sections(root: serde_json::Value) -> Result<(BenchmarkConfig, RunSection, Provenance), ConfigError> {
    let serde_json::Value::Object(mut map) = root else {
        return Err(violation(".", "top level must be a mapping"));
    };
    let run = map.remove("run").map(|v| typed("run", v)).transpose()?.unwrap_or_default();
    let prov = map
        .remove("provenance")
        .map(|v| typed("provenance", v))
        .transpose()?
        .unwrap_or_default();
    let bench = typed("", serde_json::Value::Object(map))?;
    Ok((bench, run, prov))
}

/// Hex SHA-256 of the canonical (sorted-key, compact) JSON rendering of
/// `value` with `provenance.config_hash` removed.
pub fn content_hash(value: &serde_json::Value) -> String {
    let mut v = value.clone();
    if let Some(p) = v.get_mut("provenance").and_then(|p| p.as_object_mut()) {
        p.remove("config_hash");
    }
    let mut text = String::new();
    canonical_json(&v, &mut text);
    hex::encode(Sha256::digest(text.as_bytes()))
}

fn canonical_json(v: &serde_json::Value, out: &mut String) {
    match v {
        serde_json::Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}:", serde_json::Value::String(k.clone()));
                canonical_json(&map[k], out);
            }
            out.push('}');
        }
        serde_json::Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                canonical_json(item, out);
            }
            out.push(']');
        }
        scalar => {
            let _ = write!(out, "{scalar}");
        }
    }
}

fn yaml_to_json(text: &str) -> Result<serde_json::Value, ConfigError> {
    let v: serde_yaml::Value = serde_yaml::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    serde_json::to_value(v).map_err(|e| ConfigError::Syntax(e.to_string()))
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_eval_config_str(text: &str) -> Result<EvalConfig, ConfigError> {
    EvalConfig::from_sections(yaml_to_json(text)?)
}

pub fn parse_eval_config(path: &Path) -> Result<EvalConfig, ConfigError> {
    parse_eval_config_str(&read(path)?)
}

pub fn parse_server_config_str(text: &str) -> Result<ModelServerConfig, ConfigError> {
    let cfg: ModelServerConfig = typed("", yaml_to_json(text)?)?;
    cfg.validate().map_err(|(k, m)| violation(k, m))?;
    Ok(cfg)
}

pub fn parse_server_config(path: &Path) -> Result<ModelServerConfig, ConfigError> {
    parse_server_config_str(&read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::runner::TerminationPolicy;

    const MINIMAL: &str = "
benchmark: point_reach
tasks:
  - {task_id: a, max_episode_steps: 30}
";

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_eval_config_str(MINIMAL).unwrap();
        assert_eq!(cfg.run.shards, 1);
        assert_eq!(cfg.run.step_timeout_s, 30.0);
        assert_eq!(cfg.benchmark.termination_policy, TerminationPolicy::RunToTruncation);
        assert_eq!(cfg.benchmark.episodes_per_task, 1);
        assert_eq!(cfg.config_hash().len(), 64);
    }

    #[test]
    fn identical_text_identical_hash_semantic_edit_changes_it() {
        let a = parse_eval_config_str(MINIMAL).unwrap();
        let b = parse_eval_config_str(MINIMAL).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let edited = MINIMAL.replace("30", "31");
        assert_ne!(parse_eval_config_str(&edited).unwrap().config_hash(), a.config_hash());
        let seeded = format!("{MINIMAL}base_seed: 9\n");
        assert_ne!(parse_eval_config_str(&seeded).unwrap().config_hash(), a.config_hash());
        // spelling out a default does not change meaning
        let explicit = format!("{MINIMAL}run: {{shards: 1}}\n");
        assert_eq!(parse_eval_config_str(&explicit).unwrap().config_hash(), a.config_hash());
    }

    #[test]
    fn unknown_keys_report_their_path() {
        let top = format!("{MINIMAL}colour: red\n");
        assert!(matches!(parse_eval_config_str(&top), Err(ConfigError::SchemaViolation { .. })));
        let nested = format!("{MINIMAL}run: {{shardz: 2}}\n");
        match parse_eval_config_str(&nested) {
            Err(ConfigError::SchemaViolation { path, .. }) => assert_eq!(path, "run.shardz"),
            other => panic!("{other:?}"),
        }
        let deep = MINIMAL.replace("max_episode_steps: 30", "max_episode_steps: -1");
        match parse_eval_config_str(&deep) {
            Err(ConfigError::SchemaViolation { path, .. }) => assert_eq!(path, "tasks[0].max_episode_steps"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalize_without_stats_fails_at_parse() {
        let text = format!("{MINIMAL}normalize: true\n");
        assert!(matches!(parse_eval_config_str(&text), Err(ConfigError::MissingNormalizationStats)));
    }

    #[test]
    fn json_round_trip_preserves_hash() {
        let cfg = parse_eval_config_str(MINIMAL).unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: EvalConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
        let tampered = json.replace("\"max_episode_steps\":30", "\"max_episode_steps\":29");
        assert!(serde_json::from_str::<EvalConfig>(&tampered).is_err());
    }

    #[test]
    fn server_config_parsing() {
        let cfg = parse_server_config_str(
            "policy: {name: proportional, params: {gain: 0.5}}\nchunk_horizon: 4\nreplan_interval: 2\nensemble: {kind: ema, alpha: 0.25}\n",
        )
        .unwrap();
        assert_eq!(cfg.chunk_horizon, 4);
        assert!(matches!(
            parse_server_config_str("replan_interval: 3\n"),
            Err(ConfigError::SchemaViolation { path, .. }) if path == "replan_interval"
        ));
        assert!(matches!(
            parse_server_config_str("max_batch: 3\n"),
            Err(ConfigError::SchemaViolation { .. })
        ));
    }
}
