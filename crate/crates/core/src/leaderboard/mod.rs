//! Registry of published results: schema-validated entries with provenance,
//! canonical protocols that define comparability, coverage statistics and
//! grouped rankings.

mod query;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use query::{query, render, OutputFormat, QueryFilter, RankedGroup, RankedRow};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CuratedBy {
    Agent,
    Human,
    Harness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeaderboardEntry {
    pub model: String,
    pub benchmark: String,
    pub protocol_id: String,
    pub metric_name: String,
    pub value: f64,
    /// Citation of the result's origin.
    pub source: String,
    pub curated_by: CuratedBy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

impl LeaderboardEntry {
    /// The uniqueness key `(model, benchmark, protocol, metric, source)`.
    pub fn key(&self) -> (&str, &str, &str, &str, &str) {
        (&self.model, &self.benchmark, &self.protocol_id, &self.metric_name, &self.source)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalProtocol {
    pub protocol_id: String,
    pub benchmark: String,
    pub metric_name: String,
    /// Inclusive `[min, max]`.
    pub value_range: [f64; 2],
    /// Entries rank against each other only within one group.
    pub comparability_group: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyField(&'static str),
    NonFiniteValue,
    UnknownProtocol(String),
    ProtocolMismatch { field: &'static str, expected: String, got: String },
    OutOfRange { value: f64, min: f64, max: f64 },
    Duplicate(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyField(name) => write!(f, "field {name} is empty"),
            Violation::NonFiniteValue => write!(f, "value is not a finite number"),
            Violation::UnknownProtocol(p) => write!(f, "unknown protocol {p:?}"),
            Violation::ProtocolMismatch { field, expected, got } => {
                write!(f, "{field} {got:?} does not match the protocol's {expected:?}")
            }
            Violation::OutOfRange { value, min, max } => {
                write!(f, "value {value} outside the metric range [{min}, {max}]")
            }
            Violation::Duplicate(key) => write!(f, "duplicate entry {key}"),
        }
    }
}

pub type Protocols = BTreeMap<String, CanonicalProtocol>;

/// Checks one entry against the protocol registry and against the entries
/// already accepted. Never fails; an empty list means valid.
pub fn validate_entry(entry: &LeaderboardEntry, protocols: &Protocols, accepted: &[LeaderboardEntry]) -> Vec<Violation> {
    let mut v = Vec::new();
    for (name, value) in [
        ("model", &entry.model),
        ("benchmark", &entry.benchmark),
        ("protocol_id", &entry.protocol_id),
        ("metric_name", &entry.metric_name),
        ("source", &entry.source),
    ] {
        if value.trim().is_empty() {
            v.push(Violation::EmptyField(name));
        }
    }
    if !entry.value.is_finite() {
        v.push(Violation::NonFiniteValue);
    }
    match protocols.get(&entry.protocol_id) {
        None => v.push(Violation::UnknownProtocol(entry.protocol_id.clone())),
        Some(p) => {
            if p.benchmark != entry.benchmark {
                v.push(Violation::ProtocolMismatch {
                    field: "benchmark",
                    expected: p.benchmark.clone(),
                    got: entry.benchmark.clone(),
                });
            }
            if p.metric_name != entry.metric_name {
                v.push(Violation::ProtocolMismatch {
                    field: "metric_name",
                    expected: p.metric_name.clone(),
                    got: entry.metric_name.clone(),
                });
            }
            let [min, max] = p.value_range;
            if entry.value.is_finite() && !(min..=max).contains(&entry.value) {
                v.push(Violation::OutOfRange {
                    value: entry.value,
                    min,
                    max,
                });
            }
        }
    }
    if accepted.iter().any(|a| a.key() == entry.key()) {
        v.push(Violation::Duplicate(format!("{:?}", entry.key())));
    }
    v
}

/// Validates every entry in order; each is checked for uniqueness against
/// the ones before it. Returns `(index, violation)` pairs.
pub fn validate_registry(entries: &[LeaderboardEntry], protocols: &Protocols) -> Vec<(usize, Violation)> {
    let mut out = Vec::new();
    let mut seen: HashSet<(&str, &str, &str, &str, &str)> = HashSet::new();
    for (i, e) in entries.iter().enumerate() {
        let mut vs = validate_entry(e, protocols, &[]);
        if !seen.insert(e.key()) {
            vs.push(Violation::Duplicate(format!("{:?}", e.key())));
        }
        out.extend(vs.into_iter().map(|v| (i, v)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("registry has no entries")]
pub struct EmptyRegistry;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoverageBucket {
    pub count: usize,
    pub fraction: f64,
}

/// For each k, how many models are evaluated on exactly k distinct
/// benchmarks, and what fraction of all models that is.
pub fn coverage_distribution(entries: &[LeaderboardEntry]) -> Result<BTreeMap<usize, CoverageBucket>, EmptyRegistry> {
    if entries.is_empty() {
        return Err(EmptyRegistry);
    }
    let mut per_model: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for e in entries {
        per_model.entry(&e.model).or_default().insert(&e.benchmark);
    }
    let models = per_model.len();
    let mut hist: BTreeMap<usize, usize> = BTreeMap::new();
    for benches in per_model.values() {
        *hist.entry(benches.len()).or_default() += 1;
    }
    Ok(hist
        .into_iter()
        .map(|(k, count)| {
            (
                k,
                CoverageBucket {
                    count,
                    fraction: count as f64 / models as f64,
                },
            )
        })
        .collect())
}

#[derive(Debug, thiserror::Error)]
pub enum RegistryError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// A loaded registry directory: `protocols.json` plus `entries/*.json`,
/// each entry file holding a JSON array of entries from one source.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub protocols: Protocols,
    pub entries: Vec<LeaderboardEntry>,
    /// File each entry came from, parallel to `entries`.
    pub origins: Vec<String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, RegistryError> {
    let text = fs::read_to_string(path).map_err(|source| RegistryError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| RegistryError::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

impl Registry {
    pub fn load(dir: &Path) -> Result<Self, RegistryError> {
        let list: Vec<CanonicalProtocol> = read_json(&dir.join("protocols.json"))?;
        let protocols = list.into_iter().map(|p| (p.protocol_id.clone(), p)).collect();
        let entries_dir = dir.join("entries");
        let mut files: Vec<_> = fs::read_dir(&entries_dir)
            .map_err(|source| RegistryError::Io {
                path: entries_dir.display().to_string(),
                source,
            })?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut entries = Vec::new();
        let mut origins = Vec::new();
        for f in files {
            let batch: Vec<LeaderboardEntry> = read_json(&f)?;
            let name = f.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            origins.extend(std::iter::repeat_n(name, batch.len()));
            entries.extend(batch);
        }
        Ok(Registry {
            protocols,
            entries,
            origins,
        })
    }

    pub fn validate(&self) -> Vec<(usize, Violation)> {
        validate_registry(&self.entries, &self.protocols)
    }
}

/// Leaderboard entry for a harness run: the suite success rate in percent,
/// attributed to the run's config hash.
pub fn entry_from_record(record: &crate::config::ResultRecord, model: &str, protocol: &CanonicalProtocol) -> LeaderboardEntry {
    LeaderboardEntry {
        model: model.to_owned(),
        benchmark: protocol.benchmark.clone(),
        protocol_id: protocol.protocol_id.clone(),
        metric_name: protocol.metric_name.clone(),
        value: 100.0 * record.metrics.suite_success_rate,
        source: format!("vla-eval {} run {}", record.harness_version, record.eval_config.config_hash()),
        curated_by: CuratedBy::Harness,
        notes: Some(format!(
            "{} episodes, finished {}",
            record.metrics.episodes_total, record.finished_at
        )),
    }
}
