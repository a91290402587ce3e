use std::collections::BTreeMap;
use std::str::FromStr;

use serde::Serialize;

use super::{LeaderboardEntry, Protocols};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryFilter {
    pub benchmark: Option<String>,
    pub model: Option<String>,
    pub group: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedRow {
    pub rank: usize,
    pub model: String,
    pub benchmark: String,
    pub protocol_id: String,
    pub metric_name: String,
    pub value: f64,
    pub source: String,
}

/// One ranking. Rows never mix comparability groups.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedGroup {
    pub group: String,
    pub rows: Vec<RankedRow>,
}

/// Filters, splits by comparability group, and ranks each group by value
/// (descending; ties by model name, then source). Entries whose protocol is
/// unknown are left out.
pub fn query(entries: &[LeaderboardEntry], protocols: &Protocols, filter: &QueryFilter) -> Vec<RankedGroup> {
    let keep = |want: &Option<String>, got: &str| want.as_deref().is_none_or(|w| w == got);
    let mut groups: BTreeMap<&str, Vec<&LeaderboardEntry>> = BTreeMap::new();
    for e in entries {
        let Some(p) = protocols.get(&e.protocol_id) else {
            continue;
        };
        if keep(&filter.benchmark, &e.benchmark)
            && keep(&filter.model, &e.model)
            && keep(&filter.group, &p.comparability_group)
        {
            groups.entry(&p.comparability_group).or_default().push(e);
        }
    }
    groups
        .into_iter()
        .map(|(group, mut es)| {
            es.sort_by(|a, b| {
                b.value
                    .total_cmp(&a.value)
                    .then_with(|| a.model.cmp(&b.model))
                    .then_with(|| a.source.cmp(&b.source))
            });
            RankedGroup {
                group: group.to_owned(),
                rows: es
                    .into_iter()
                    .enumerate()
                    .map(|(i, e)| RankedRow {
                        rank: i + 1,
                        model: e.model.clone(),
                        benchmark: e.benchmark.clone(),
                        protocol_id: e.protocol_id.clone(),
                        metric_name: e.metric_name.clone(),
                        value: e.value,
                        source: e.source.clone(),
                    })
                    .collect(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Table,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(OutputFormat::Table),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(format!("unknown output format {other:?} (table, csv, json)")),
        }
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

pub fn render(groups: &[RankedGroup], format: OutputFormat) -> String {
    match format {
        OutputFormat::Json => serde_json::to_string_pretty(groups).expect("rankings serialize") + "\n",
        OutputFormat::Csv => {
            let mut s = String::from("group,rank,model,benchmark,protocol_id,metric_name,value,source\n");
            for g in groups {
                for r in &g.rows {
                    s.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        csv_field(&g.group),
                        r.rank,
                        csv_field(&r.model),
                        csv_field(&r.benchmark),
                        csv_field(&r.protocol_id),
                        csv_field(&r.metric_name),
                        r.value,
                        csv_field(&r.source)
                    ));
                }
            }
            s
        }
        OutputFormat::Table => {
            let mut s = String::new();
            for g in groups {
                s.push_str(&format!("== {} ==\n", g.group));
                for r in &g.rows {
                    s.push_str(&format!(
                        "{:>4}  {:<28} {:>8.2}  {:<20} {}\n",
                        r.rank, r.model, r.value, r.protocol_id, r.source
                    ));
                }
            }
            s
        }
    }
}
