//! Layer 2: runs a plan against a data source and returns a bounded summary.
//!
//! This module makes no language-model calls and has no dependency on the provider
//! module. Its only inputs are a validated plan and a [`DataSource`].

use std::collections::BTreeMap;

use crate::datasources::{DataSource, MAX_YEAR_SPAN};
use crate::error::SourceError;
use crate::tokens::{summary_tokens, K_MAX, MAX_LABEL_CHARS, MAX_POINTS, MAX_SERIES};
use crate::types::{
    DataPoint, Intent, QueryPlan, RankDimension, Series, StatisticalSummary, SummaryMetadata,
    YearRange, MAX_SUBJECT_CHARS, MAX_TOP_N,
};

/// Bucket limit for the work-type breakdown attached to statistics summaries.
pub const STATISTICS_FACET_LIMIT: usize = 10;
const MAX_SOURCE_NAME_CHARS: usize = 80;

/// Signature shared by [`execute`] and any substitute executor plugged into a pipeline.
pub type ExecuteFn = fn(&QueryPlan, &dyn DataSource) -> Result<StatisticalSummary, SourceError>;

/// The most recent `MAX_YEAR_SPAN` years of `range`.
pub fn series_window(range: YearRange) -> YearRange {
    let from = range
        .from_year
        .max(range.until_year - MAX_YEAR_SPAN as i32 + 1);
    YearRange::new(from, range.until_year)
}

fn year_series(
    source: &dyn DataSource,
    subject: &str,
    range: YearRange,
) -> Result<Series, SourceError> {
    let window = series_window(range);
    let points = source
        .yearly_counts(subject, window.from_year, window.until_year)?
        .into_iter()
        .map(|(year, count)| DataPoint::new(year.to_string(), count))
        .collect();
    Ok(Series {
        subject: subject.to_string(),
        points,
    })
}

fn range_total(
    source: &dyn DataSource,
    subject: &str,
    range: YearRange,
    series: &Series,
) -> Result<u64, SourceError> {
    if range.span() <= MAX_YEAR_SPAN {
        Ok(series.points.iter().map(|p| p.value).sum())
    } else {
        source.count_total(subject, Some(range))
    }
}

fn facet_series(
    source: &dyn DataSource,
    subject: &str,
    dimension: RankDimension,
    limit: usize,
) -> Result<Series, SourceError> {
    let points = source
        .facet_counts(subject, dimension, limit)?
        .into_iter()
        .map(|b| DataPoint::new(b.label, b.count))
        .collect();
    Ok(Series {
        subject: subject.to_string(),
        points,
    })
}

/// Executes `plan` against `source`.
///
/// * Trend: one yearly series per subject; totals are the range sums.
/// * Comparison: a total per subject, plus yearly series when the plan has a range.
/// * Ranking: one facet series over the first subject; totals per subject.
/// * Statistics: totals per subject plus a work-type breakdown of the first subject.
pub fn execute(
    plan: &QueryPlan,
    source: &dyn DataSource,
) -> Result<StatisticalSummary, SourceError> {
    let mut series = Vec::new();
    let mut totals = BTreeMap::new();

    match plan.intent {
        Intent::Trend => {
            let range = plan
                .time_range
                .ok_or_else(|| SourceError::Precondition("trend plan without time range".into()))?;
            for subject in &plan.subjects {
                let s = year_series(source, subject, range)?;
                totals.insert(subject.clone(), range_total(source, subject, range, &s)?);
                series.push(s);
            }
        }
        Intent::Comparison => {
            for subject in &plan.subjects {
                match plan.time_range {
                    Some(range) => {
                        let s = year_series(source, subject, range)?;
                        totals.insert(subject.clone(), range_total(source, subject, range, &s)?);
                        series.push(s);
                    }
                    None => {
                        totals.insert(subject.clone(), source.count_total(subject, None)?);
                    }
                }
            }
        }
        Intent::Ranking => {
            let dimension = plan.rank_dimension.unwrap_or(RankDimension::Venue);
            let limit = plan.top_n.unwrap_or(10).min(MAX_TOP_N) as usize;
            series.push(facet_series(source, &plan.subjects[0], dimension, limit)?);
            for subject in &plan.subjects {
                totals.insert(subject.clone(), source.count_total(subject, plan.time_range)?);
            }
        }
        Intent::Statistics => {
            for subject in &plan.subjects {
                totals.insert(subject.clone(), source.count_total(subject, plan.time_range)?);
            }
            series.push(facet_series(
                source,
                &plan.subjects[0],
                RankDimension::WorkType,
                STATISTICS_FACET_LIMIT,
            )?);
        }
    }

    let summary = StatisticalSummary {
        series,
        totals,
        metadata: SummaryMetadata {
            source_name: source.source_name().to_string(),
            dataset_size_estimate: source.dataset_size_estimate()?,
            retrieved_at: source.retrieved_at(),
            plan_echo: plan.clone(),
        },
    };
    Ok(enforce_size_contract(summary))
}

fn truncate_chars(s: &mut String, max: usize) {
    if let Some((idx, _)) = s.char_indices().nth(max) {
        s.truncate(idx);
    }
}

fn is_year_series(intent: Intent) -> bool {
    matches!(intent, Intent::Trend | Intent::Comparison)
}

/// Brings a summary within the fixed-size contract.
///
/// Caps series at five, labels at 80 characters, points at 50 per series (ranking
/// series at the plan's `top_n`). Year series keep their most recent points and
/// facet series their highest counts. If the canonical form still exceeds
/// [`K_MAX`] tokens, points are dropped one at a time from the longest series
/// until it fits. Idempotent.
pub fn enforce_size_contract(mut summary: StatisticalSummary) -> StatisticalSummary {
    let intent = summary.intent();
    let years = is_year_series(intent);
    truncate_chars(&mut summary.metadata.source_name, MAX_SOURCE_NAME_CHARS);

    summary.series.truncate(MAX_SERIES);
    for s in &mut summary.series {
        truncate_chars(&mut s.subject, MAX_SUBJECT_CHARS);
    }
    if summary.totals.len() > MAX_SERIES
        || summary.totals.keys().any(|k| k.chars().count() > MAX_SUBJECT_CHARS)
    {
        let keep: Vec<String> = summary.series.iter().map(|s| s.subject.clone()).collect();
        let mut capped = BTreeMap::new();
        for (mut k, v) in std::mem::take(&mut summary.totals) {
            truncate_chars(&mut k, MAX_SUBJECT_CHARS);
            if keep.contains(&k) || capped.len() + keep.len() < MAX_SERIES {
                capped.insert(k, v);
            }
        }
        summary.totals = capped;
    }

    let point_cap = if intent == Intent::Ranking {
        summary
            .metadata
            .plan_echo
            .top_n
            .unwrap_or(MAX_TOP_N)
            .min(MAX_TOP_N) as usize
    } else {
        MAX_POINTS
    };
    for s in &mut summary.series {
        for p in &mut s.points {
            truncate_chars(&mut p.label, MAX_LABEL_CHARS);
        }
        if years {
            let excess = s.points.len().saturating_sub(point_cap);
            s.points.drain(..excess);
        } else {
            s.points
                .sort_by(|a, b| b.value.cmp(&a.value).then_with(|| a.label.cmp(&b.label)));
            s.points.truncate(point_cap);
        }
    }

    while summary_tokens(&summary) > K_MAX {
        let longest = summary
            .series
            .iter()
            .enumerate()
            .filter(|(_, s)| !s.points.is_empty())
            .max_by(|(ia, a), (ib, b)| a.points.len().cmp(&b.points.len()).then(ib.cmp(ia)))
            .map(|(i, _)| i);
        match longest {
            Some(i) if years => {
                summary.series[i].points.remove(0);
            }
            Some(i) => {
                summary.series[i].points.pop();
            }
            None => break,
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasources::synthetic::{synthetic_snapshot, SyntheticRecord, SyntheticSource, WorkType};
    use crate::tokens::serialize_canonical;

    fn plan(intent: Intent, subjects: &[&str]) -> QueryPlan {
        QueryPlan {
            intent,
            subjects: subjects.iter().map(|s| s.to_string()).collect(),
            time_range: None,
            top_n: None,
            rank_dimension: None,
        }
    }

    fn one_record() -> SyntheticSource {
        SyntheticSource::from_records(vec![SyntheticRecord {
            year: 2020,
            keywords: vec!["graphene"],
            venue: "ACS Nano",
            publisher: "Wiley",
            work_type: WorkType::JournalArticle,
        }])
    }

    #[test]
    fn trend_on_single_record() {
        let mut p = plan(Intent::Trend, &["graphene"]);
        p.time_range = Some(YearRange::new(2019, 2021));
        let s = execute(&p, &one_record()).unwrap();
        assert_eq!(
            s.series[0].points,
            vec![
                DataPoint::new("2019", 0),
                DataPoint::new("2020", 1),
                DataPoint::new("2021", 0)
            ]
        );
        assert_eq!(s.totals["graphene"], 1);
        assert_eq!(s.metadata.retrieved_at, synthetic_snapshot());
    }

    #[test]
    fn comparison_on_empty_source() {
        let src = SyntheticSource::from_records(vec![]);
        let s = execute(&plan(Intent::Comparison, &["a", "b"]), &src).unwrap();
        assert!(s.series.is_empty());
        assert_eq!(s.totals.values().copied().collect::<Vec<_>>(), vec![0, 0]);
        assert!(s.is_empty());
    }

    fn adversarial(intent: Intent, series: usize, points: usize, label_len: usize) -> StatisticalSummary {
        let mut p = plan(intent, &["s"]);
        p.subjects = (0..5).map(|i| format!("{i}{}", "x".repeat(119))).collect();
        if intent == Intent::Ranking {
            p.top_n = Some(20);
            p.rank_dimension = Some(RankDimension::Venue);
        }
        p.time_range = Some(YearRange::new(1600, 2027));
        let series: Vec<Series> = (0..series)
            .map(|i| Series {
                subject: p.subjects[i % 5].clone(),
                points: (0..points)
                    .map(|j| DataPoint::new(format!("{j:0>width$}", width = label_len), u64::MAX - j as u64))
                    .collect(),
            })
            .collect();
        StatisticalSummary {
            totals: p.subjects.iter().map(|s| (s.clone(), u64::MAX)).collect(),
            series,
            metadata: SummaryMetadata {
                source_name: "n".repeat(300),
                dataset_size_estimate: u64::MAX,
                retrieved_at: synthetic_snapshot(),
                plan_echo: p,
            },
        }
    }

    #[test]
    fn adversarial_ranking_keeps_top_twenty_within_budget() {
        let s = enforce_size_contract(adversarial(Intent::Ranking, 1, 500, 3));
        assert!(s.series[0].points.len() <= 20);
        assert_eq!(s.series[0].points[0].value, u64::MAX);
        assert!(summary_tokens(&s) <= K_MAX);
    }

    #[test]
    fn worst_case_summaries_fit_and_are_idempotent() {
        for intent in Intent::ALL {
            for (series, points, label) in [(5, 500, 200), (9, 60, 80), (5, 50, 4), (1, 0, 1)] {
                let once = enforce_size_contract(adversarial(intent, series, points, label));
                assert!(summary_tokens(&once) <= K_MAX, "{intent} {series}x{points}");
                assert!(once.series.len() <= MAX_SERIES);
                assert!(once.series.iter().all(|s| s.points.len() <= MAX_POINTS));
                let twice = enforce_size_contract(once.clone());
                assert_eq!(serialize_canonical(&once), serialize_canonical(&twice));
            }
        }
    }

    #[test]
    fn trend_truncation_keeps_recent_years() {
        let mut s = adversarial(Intent::Trend, 1, 0, 1);
        s.series[0].points = (1900..2000).map(|y| DataPoint::new(y.to_string(), 1)).collect();
        let s = enforce_size_contract(s);
        let pts = &s.series[0].points;
        assert_eq!(pts.last().unwrap().label, "1999");
        let years: Vec<i32> = pts.iter().map(|p| p.label.parse().unwrap()).collect();
        assert!(years.windows(2).all(|w| w[1] == w[0] + 1));
    }

    #[test]
    fn series_window_clips_to_fifty() {
        assert_eq!(series_window(YearRange::new(1900, 2020)), YearRange::new(1971, 2020));
        assert_eq!(series_window(YearRange::new(2015, 2024)), YearRange::new(2015, 2024));
    }

    #[test]
    fn long_trend_totals_cover_full_range() {
        let src = SyntheticSource::generate(11, 3000);
        let mut p = plan(Intent::Trend, &["graphene"]);
        p.time_range = Some(YearRange::new(1950, 2029));
        let s = execute(&p, &src).unwrap();
        assert_eq!(s.totals["graphene"], src.count_total("graphene", None).unwrap());
        assert!(s.series[0].points.len() <= MAX_POINTS);
    }
}
