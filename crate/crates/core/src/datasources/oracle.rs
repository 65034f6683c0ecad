//! Brute-force reference aggregation over raw synthetic records.
//!
//! Shares no code path with the Executor or [`super::SyntheticSource`]: it walks the
//! record structs directly, matches subjects on their string keywords and builds
//! every group-by with plain maps. Only the final size contract is shared, since
//! that is a property of the summary type rather than of aggregation.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::executor::{enforce_size_contract, STATISTICS_FACET_LIMIT};
use crate::types::{
    DataPoint, Intent, QueryPlan, RankDimension, Series, StatisticalSummary, SummaryMetadata,
    YearRange,
};

use super::synthetic::{synthetic_snapshot, SyntheticRecord, SYNTHETIC_SOURCE_NAME};

fn words(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

struct Matcher {
    subject_words: BTreeSet<String>,
}

impl Matcher {
    fn new(subject: &str) -> Self {
        Self {
            subject_words: words(subject),
        }
    }

    fn matches(&self, record: &SyntheticRecord) -> bool {
        record
            .keywords
            .iter()
            .any(|k| !words(k).is_disjoint(&self.subject_words))
    }
}

fn matching<'a>(
    records: &'a [SyntheticRecord],
    subject: &str,
) -> impl Iterator<Item = &'a SyntheticRecord> {
    let m = Matcher::new(subject);
    records.iter().filter(move |r| m.matches(r))
}

fn in_range(range: Option<YearRange>, year: i32) -> bool {
    match range {
        Some(r) => r.from_year <= year && year <= r.until_year,
        None => true,
    }
}

fn yearly(records: &[SyntheticRecord], subject: &str, range: YearRange) -> (Series, u64) {
    let mut per_year: HashMap<i32, u64> = HashMap::new();
    let mut total = 0;
    for r in matching(records, subject) {
        if in_range(Some(range), r.year) {
            *per_year.entry(r.year).or_default() += 1;
            total += 1;
        }
    }
    // the series covers at most the last fifty years of the range
    let first_shown = std::cmp::max(range.from_year, range.until_year - 49);
    let mut points = Vec::new();
    let mut year = first_shown;
    while year <= range.until_year {
        points.push(DataPoint {
            label: format!("{year}"),
            value: per_year.get(&year).copied().unwrap_or(0),
        });
        year += 1;
    }
    (
        Series {
            subject: subject.to_string(),
            points,
        },
        total,
    )
}

fn facet_label(record: &SyntheticRecord, dimension: RankDimension) -> &'static str {
    match dimension {
        RankDimension::Venue => record.venue,
        RankDimension::Publisher => record.publisher,
        RankDimension::WorkType => record.work_type.as_str(),
    }
}

fn group_by(
    records: &[SyntheticRecord],
    subject: &str,
    dimension: RankDimension,
    limit: usize,
) -> Series {
    let mut groups: BTreeMap<&str, u64> = BTreeMap::new();
    for r in matching(records, subject) {
        *groups.entry(facet_label(r, dimension)).or_insert(0) += 1;
    }
    let mut rows: Vec<(&str, u64)> = groups.into_iter().collect();
    // BTreeMap iteration is label-ascending; a stable sort on count keeps that as the tie-break
    rows.sort_by_key(|(_, c)| std::cmp::Reverse(*c));
    Series {
        subject: subject.to_string(),
        points: rows
            .into_iter()
            .take(limit)
            .map(|(l, c)| DataPoint {
                label: l.to_string(),
                value: c,
            })
            .collect(),
    }
}

fn count(records: &[SyntheticRecord], subject: &str, range: Option<YearRange>) -> u64 {
    matching(records, subject)
        .filter(|r| in_range(range, r.year))
        .count() as u64
}

/// Computes the summary for `plan` by full scans over `records`.
pub fn brute_force_aggregate(records: &[SyntheticRecord], plan: &QueryPlan) -> StatisticalSummary {
    let mut series = Vec::new();
    let mut totals = BTreeMap::new();
    let first = plan.subjects[0].as_str();

    match plan.intent {
        Intent::Trend | Intent::Comparison if plan.time_range.is_some() => {
            let range = plan.time_range.unwrap();
            for s in &plan.subjects {
                let (ser, total) = yearly(records, s, range);
                series.push(ser);
                totals.insert(s.clone(), total);
            }
        }
        Intent::Trend | Intent::Comparison => {
            for s in &plan.subjects {
                totals.insert(s.clone(), count(records, s, None));
            }
        }
        Intent::Ranking => {
            let dim = plan.rank_dimension.unwrap_or(RankDimension::Venue);
            let limit = plan.top_n.unwrap_or(10) as usize;
            series.push(group_by(records, first, dim, limit));
            for s in &plan.subjects {
                totals.insert(s.clone(), count(records, s, plan.time_range));
            }
        }
        Intent::Statistics => {
            for s in &plan.subjects {
                totals.insert(s.clone(), count(records, s, plan.time_range));
            }
            series.push(group_by(
                records,
                first,
                RankDimension::WorkType,
                STATISTICS_FACET_LIMIT,
            ));
        }
    }

    enforce_size_contract(StatisticalSummary {
        series,
        totals,
        metadata: SummaryMetadata {
            source_name: SYNTHETIC_SOURCE_NAME.to_string(),
            dataset_size_estimate: records.len() as u64,
            retrieved_at: synthetic_snapshot(),
            plan_echo: plan.clone(),
        },
    })
}
