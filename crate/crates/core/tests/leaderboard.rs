mod common;

use std::collections::BTreeMap;

use common::data_dir;
use proptest::prelude::*;
use vla_eval::leaderboard::{
    coverage_distribution, query, validate_entry, validate_registry, CanonicalProtocol, CuratedBy, LeaderboardEntry,
    Protocols, QueryFilter, Registry, Violation,
};

fn histogram(reg: &Registry) -> BTreeMap<usize, usize> {
    coverage_distribution(&reg.entries)
        .unwrap()
        .into_iter()
        .map(|(k, b)| (k, b.count))
        .collect()
}

fn expected(dir: &str) -> (usize, BTreeMap<usize, usize>) {
    let text = std::fs::read_to_string(data_dir().join("leaderboard").join(dir).join("expected_coverage.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let hist = v["histogram"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, n)| (k.parse().unwrap(), n.as_u64().unwrap() as usize))
        .collect();
    (v["models"].as_u64().unwrap() as usize, hist)
}

#[test]
fn sample_registry_matches_its_hand_count() {
    let reg = Registry::load(&data_dir().join("leaderboard/sample")).unwrap();
    assert!(reg.validate().is_empty(), "{:?}", reg.validate());
    let hand: BTreeMap<usize, usize> = [(1, 7), (2, 3), (3, 1), (4, 1)].into_iter().collect();
    assert_eq!(histogram(&reg), hand);
    assert_eq!(expected("sample"), (12, hand));
    let dist = coverage_distribution(&reg.entries).unwrap();
    assert!((dist[&1].fraction - 7.0 / 12.0).abs() < 1e-15);
}

#[test]
fn survey_registry_is_81_percent_single_benchmark() {
    let reg = Registry::load(&data_dir().join("leaderboard/survey")).unwrap();
    assert!(reg.validate().is_empty());
    let (models, hist) = expected("survey");
    assert_eq!(models, 509);
    assert_eq!(histogram(&reg), hist);
    let dist = coverage_distribution(&reg.entries).unwrap();
    assert_eq!(dist[&1].count, 412);
    assert_eq!((100.0 * dist[&1].fraction).round(), 81.0);
    let benchmarks: std::collections::BTreeSet<_> = reg.entries.iter().map(|e| e.benchmark.as_str()).collect();
    assert_eq!(benchmarks.len(), 17);
}

#[test]
fn fixture_entries_trip_each_violation_class() {
    let reg = Registry::load(&data_dir().join("leaderboard/sample")).unwrap();
    let good = reg.entries[0].clone();
    let unknown = LeaderboardEntry {
        protocol_id: "libero_unofficial".into(),
        ..good.clone()
    };
    assert!(matches!(validate_entry(&unknown, &reg.protocols, &[])[..], [Violation::UnknownProtocol(_)]));
    let out_of_range = LeaderboardEntry {
        value: 140.0,
        ..good.clone()
    };
    assert!(matches!(validate_entry(&out_of_range, &reg.protocols, &[])[..], [Violation::OutOfRange { .. }]));
    let dup = validate_entry(&good, &reg.protocols, &reg.entries);
    assert!(matches!(dup[..], [Violation::Duplicate(_)]));
}

#[test]
fn rankings_on_the_sample_stay_within_groups() {
    let reg = Registry::load(&data_dir().join("leaderboard/sample")).unwrap();
    let groups = query(&reg.entries, &reg.protocols, &QueryFilter::default());
    let names: Vec<&str> = groups.iter().map(|g| g.group.as_str()).collect();
    assert_eq!(names.len(), reg.protocols.len());
    for g in &groups {
        for row in &g.rows {
            assert_eq!(reg.protocols[&row.protocol_id].comparability_group, g.group);
        }
    }
    let libero = query(
        &reg.entries,
        &reg.protocols,
        &QueryFilter {
            group: Some("libero_4suite".into()),
            ..Default::default()
        },
    );
    assert_eq!(libero[0].rows[0].model, "alpha-vla");
    assert_eq!(libero[0].rows.len(), 8);
}

fn protocols() -> Protocols {
    (0..4)
        .map(|i| {
            let id = format!("p{i}");
            let p = CanonicalProtocol {
                protocol_id: id.clone(),
                benchmark: format!("b{}", i % 3),
                metric_name: "success_rate".into(),
                value_range: [0.0, 100.0],
                comparability_group: format!("g{}", i % 2),
                description: None,
            };
            (id, p)
        })
        .collect()
}

fn entries() -> impl Strategy<Value = Vec<LeaderboardEntry>> {
    prop::collection::vec((0usize..20, 0usize..5, -10.0f64..120.0, 0usize..3), 1..60).prop_map(|raw| {
        let ps = protocols();
        raw.into_iter()
            .map(|(m, p, value, s)| {
                let pid = format!("p{p}");
                let benchmark = ps.get(&pid).map_or_else(|| "b9".to_owned(), |x| x.benchmark.clone());
                LeaderboardEntry {
                    model: format!("m{m}"),
                    benchmark,
                    protocol_id: pid,
                    metric_name: "success_rate".into(),
                    value,
                    source: format!("s{s}"),
                    curated_by: CuratedBy::Agent,
                    notes: None,
                }
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn validation_is_idempotent(es in entries()) {
        let ps = protocols();
        prop_assert_eq!(validate_registry(&es, &ps), validate_registry(&es, &ps));
    }

    #[test]
    fn coverage_fractions_sum_to_one(es in entries()) {
        let dist = coverage_distribution(&es).unwrap();
        let models: std::collections::BTreeSet<_> = es.iter().map(|e| &e.model).collect();
        prop_assert_eq!(dist.values().map(|b| b.count).sum::<usize>(), models.len());
        prop_assert!((dist.values().map(|b| b.fraction).sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn ranking_never_mixes_groups(es in entries()) {
        let ps = protocols();
        for g in query(&es, &ps, &QueryFilter::default()) {
            for row in &g.rows {
                prop_assert_eq!(&ps[&row.protocol_id].comparability_group, &g.group);
            }
            prop_assert!(g.rows.windows(2).all(|w| w[0].value >= w[1].value));
        }
    }
}
