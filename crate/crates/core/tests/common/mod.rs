#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, RngCore};
use res_agent::datasources::crossref::{CrossrefConfig, CrossrefSource};
use res_agent::datasources::http::{Backoff, HttpResponse, ScriptedTransport};
use res_agent::datasources::synthetic::{KEYWORDS, LAST_YEAR};
use res_agent::datasources::DataSource;
use res_agent::error::SourceError;
use res_agent::executor::execute;
use res_agent::types::{
    current_year, DataPoint, Intent, QueryPlan, RankDimension, Series, StatisticalSummary, YearRange,
};
use serde_json::Value;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).expect("fixture exists")
}

/// Keys that would indicate record-level bibliographic content.
pub const FORBIDDEN_KEYS: [&str; 11] = [
    "title", "author", "authors", "DOI", "doi", "URL", "abstract", "items", "keywords",
    "container-title", "reference",
];

pub fn object_keys(v: &Value, out: &mut BTreeSet<String>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                out.insert(k.clone());
                object_keys(v, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|v| object_keys(v, out)),
        _ => {}
    }
}

pub fn forbidden_keys_in(v: &Value) -> Vec<String> {
    let mut keys = BTreeSet::new();
    object_keys(v, &mut keys);
    keys.into_iter()
        .filter(|k| FORBIDDEN_KEYS.contains(&k.as_str()))
        .collect()
}

fn pick<'a, T>(rng: &mut impl RngCore, items: &'a [T]) -> &'a T {
    &items[rng.random_range(0..items.len())]
}

fn random_subject(rng: &mut impl RngCore) -> String {
    let kw = *pick(rng, &KEYWORDS);
    match rng.random_range(0..6) {
        0 => kw.to_uppercase(),
        1 => kw.split(' ').next_back().unwrap_or(kw).to_string(),
        2 => format!("{kw} {}", pick(rng, &KEYWORDS)),
        3 => pick(rng, &["zebra", "underwater basket weaving", "x9"]).to_string(),
        _ => kw.to_string(),
    }
}

/// A valid plan over the synthetic vocabulary, exercising every intent and edge shape.
pub fn random_plan(rng: &mut impl RngCore) -> QueryPlan {
    let intent = *pick(rng, &Intent::ALL);
    let count = match intent {
        Intent::Comparison => rng.random_range(2..=5),
        _ => rng.random_range(1..=3),
    };
    let mut subjects: Vec<String> = Vec::new();
    while subjects.len() < count {
        let s = random_subject(rng);
        if !subjects.contains(&s) {
            subjects.push(s);
        }
    }
    let max_year = (current_year() + 1).min(LAST_YEAR);
    let time_range = if intent == Intent::Trend || rng.random_bool(0.5) {
        let until = rng.random_range(1985..=max_year);
        let span = rng.random_range(1..=70);
        Some(YearRange::new((until - span + 1).max(1600), until))
    } else {
        None
    };
    let (top_n, rank_dimension) = if intent == Intent::Ranking {
        (Some(rng.random_range(1..=20)), Some(*pick(rng, &RankDimension::ALL)))
    } else {
        (None, None)
    };
    let plan = QueryPlan {
        intent,
        subjects,
        time_range,
        top_n,
        rank_dimension,
    };
    plan.validate(current_year()).expect("generated plan is valid");
    plan
}

/// A summary with arbitrary values, labels and subjects for the given plan.
pub fn random_summary(rng: &mut impl RngCore) -> StatisticalSummary {
    let plan = random_plan(rng);
    let mut series = Vec::new();
    let value = |rng: &mut dyn RngCore| -> u64 {
        match rng.next_u32() % 4 {
            0 => 0,
            1 => rng.next_u64() % 10,
            2 => rng.next_u64() % 100_000,
            _ => rng.next_u64() % 10_000_000_000,
        }
    };
    for s in plan.subjects.iter().take(3) {
        let n = rng.next_u32() % 12;
        let points = (0..n)
            .map(|i| {
                let label = if plan.intent == Intent::Ranking || plan.intent == Intent::Statistics {
                    format!("{} {}", pick(rng, &["Venue", "Press", "Journal of"]), rng.next_u32() % 500)
                } else {
                    (2000 + i as i32).to_string()
                };
                DataPoint::new(label, value(rng))
            })
            .collect();
        series.push(Series {
            subject: s.clone(),
            points,
        });
    }
    let totals = plan.subjects.iter().map(|s| (s.clone(), value(rng))).collect();
    StatisticalSummary {
        series,
        totals,
        metadata: res_agent::types::SummaryMetadata {
            source_name: "synthetic".into(),
            dataset_size_estimate: value(rng),
            retrieved_at: res_agent::datasources::synthetic::synthetic_snapshot(),
            plan_echo: plan,
        },
    }
}

/// Executor that also copies one label per matched record into the summary,
/// bypassing the size contract. Used to show the checks detect linear growth.
pub fn leaky_execute(plan: &QueryPlan, source: &dyn DataSource) -> Result<StatisticalSummary, SourceError> {
    let mut summary = execute(plan, source)?;
    let matched = source.count_total(&plan.subjects[0], plan.time_range)?;
    summary.series.push(Series {
        subject: "raw".into(),
        points: (0..matched)
            .map(|i| DataPoint::new(format!("record-{i}"), 1))
            .collect(),
    });
    Ok(summary)
}

/// Offline Crossref server answering from the fixture files.
pub fn scripted_crossref() -> (Arc<CrossrefSource>, ScriptedTransport) {
    let total = fixture("crossref/cybersecurity_total.json");
    let all = fixture("crossref/all_works_total.json");
    let venues = fixture("crossref/graphene_venues.json");
    let years = fixture("crossref/gene_therapy_years.json");
    let transport = ScriptedTransport::new(move |req| {
        let url = &req.url;
        let body = if url.contains("facet=container-title") {
            venues.clone()
        } else if url.contains("facet=published") {
            years.clone()
        } else if !url.contains("query.bibliographic=") {
            all.clone()
        } else if url.contains("cybersecurity") && !url.contains("filter=") {
            total.clone()
        } else {
            // Deterministic per-URL count for every other query.
            let h = url.bytes().fold(7u64, |h, b| h.wrapping_mul(31).wrapping_add(b as u64));
            format!(r#"{{"status":"ok","message":{{"total-results":{},"items":[]}}}}"#, h % 5000)
        };
        Ok(HttpResponse::ok(body))
    });
    let config = CrossrefConfig {
        mailto: "tests@example.org".into(),
        min_spacing: Duration::ZERO,
        backoff: Backoff {
            initial: Duration::from_millis(1),
            max_retries: 2,
        },
        ..CrossrefConfig::default()
    };
    (
        Arc::new(CrossrefSource::new(config, Arc::new(transport.clone()))),
        transport,
    )
}
