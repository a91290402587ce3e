use std::fs;
use std::io::{self, BufRead, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalConfig, HARNESS_VERSION};
use crate::model_server::ModelServerConfig;
use crate::orchestrator::AggregateMetrics;
use crate::runner::EpisodeResult;

pub const RESULT_FILE: &str = "result.json";
pub const EPISODES_FILE: &str = "episodes.jsonl";

/// Everything needed to re-run an evaluation and check its numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub eval_config: EvalConfig,
    /// As announced by the server during the handshake.
    pub model_server_config: Option<ModelServerConfig>,
    pub metrics: AggregateMetrics,
    pub episodes: Vec<EpisodeResult>,
    pub harness_version: String,
    /// RFC 3339.
    pub started_at: String,
    pub finished_at: String,
}

impl ResultRecord {
    pub fn new(
        eval_config: EvalConfig,
        model_server_config: Option<ModelServerConfig>,
        metrics: AggregateMetrics,
        episodes: Vec<EpisodeResult>,
        started_at: chrono::DateTime<chrono::Utc>,
        finished_at: chrono::DateTime<chrono::Utc>,
    ) -> Self {
        ResultRecord {
            eval_config,
            model_server_config,
            metrics,
            episodes,
            harness_version: HARNESS_VERSION.to_owned(),
            started_at: started_at.to_rfc3339(),
            finished_at: finished_at.to_rfc3339(),
        }
    }

    /// Writes `result.json` and `episodes.jsonl` into `dir`, creating it.
    pub fn write_to(&self, dir: &Path) -> io::Result<()> {
        fs::create_dir_all(dir)?;
        let mut f = BufWriter::new(fs::File::create(dir.join(RESULT_FILE))?);
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        f.flush()?;
        let mut f = BufWriter::new(fs::File::create(dir.join(EPISODES_FILE))?);
        for e in &self.episodes {
            serde_json::to_writer(&mut f, e)?;
            f.write_all(b"\n")?;
        }
        f.flush()
    }

    pub fn read_from(dir: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(dir.join(RESULT_FILE))?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }
}

/// Reads a JSON-lines episode stream, skipping a trailing partial line.
pub fn read_episodes(path: &Path) -> io::Result<Vec<EpisodeResult>> {
    let f = io::BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in f.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(&line) {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("skipping unreadable result line in {}: {e}", path.display()),
        }
    }
    Ok(out)
}
