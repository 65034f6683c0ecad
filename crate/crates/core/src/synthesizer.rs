//! Layer 3: renders a [`StatisticalSummary`] into prose and a chart configuration.
//!
//! The only inputs are the summary and the fixed system prompt. There is no way to
//! pass record-level data into this module.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

use crate::error::ProviderError;
use crate::provider::{CallSite, LlmProvider, PromptSpec};
use crate::tokens::serialize_canonical;
use crate::types::{
    ChartConfig, ChartType, Intent, Narrative, RankDimension, StatisticalSummary, TokenUsage,
    UsageSource,
};

pub const SYNTHESIZER_SYSTEM_PROMPT: &str = "You are the narrator of a scholarly analytics \
assistant. You receive a JSON object of aggregate statistics computed by deterministic code: \
series of labelled counts, per-subject totals and metadata. Write two to four sentences that \
describe what these statistics show. Use only numbers that appear in the JSON, or percentages \
and ratios computed directly from them and labelled as such. Do not extrapolate, do not \
speculate about causes, do not cite or invent individual papers, authors or venues that are \
not listed. If every count is zero, say that no matching results were found.";

pub fn build_chart_config(summary: &StatisticalSummary) -> Option<ChartConfig> {
    if summary.is_empty() {
        return None;
    }
    let series_subjects = || summary.series.iter().map(|s| s.subject.clone()).collect::<Vec<_>>();
    let total_subjects = || summary.totals.keys().cloned().collect::<Vec<_>>();
    let y_label = "matching works".to_string();
    let config = match summary.intent() {
        Intent::Trend => ChartConfig {
            chart_type: ChartType::Line,
            x_label: "year".into(),
            y_label,
            series_refs: series_subjects(),
        },
        Intent::Comparison if !summary.series.is_empty() => ChartConfig {
            chart_type: ChartType::GroupedBar,
            x_label: "year".into(),
            y_label,
            series_refs: series_subjects(),
        },
        Intent::Comparison | Intent::Statistics => ChartConfig {
            chart_type: ChartType::Bar,
            x_label: "subject".into(),
            y_label,
            series_refs: total_subjects(),
        },
        Intent::Ranking => ChartConfig {
            chart_type: ChartType::Bar,
            x_label: summary
                .metadata
                .plan_echo
                .rank_dimension
                .unwrap_or(RankDimension::Venue)
                .as_str()
                .into(),
            y_label,
            series_refs: series_subjects(),
        },
    };
    Some(config)
}

/// Signed percentage change with one decimal, rounded half away from zero.
/// `None` when `first` is zero.
pub fn format_pct_change(first: u64, last: u64) -> Option<String> {
    if first == 0 {
        return None;
    }
    let diff = last as i128 - first as i128;
    let first = first as i128;
    let tenths = (diff.abs() * 1000 * 2 + first) / (2 * first);
    let sign = if diff < 0 { '-' } else { '+' };
    Some(format!("{sign}{}.{}%", tenths / 10, tenths % 10))
}

/// `larger / smaller` with one decimal, rounded half up. `None` when `smaller` is zero.
pub fn format_ratio(larger: u64, smaller: u64) -> Option<String> {
    if smaller == 0 {
        return None;
    }
    let (l, s) = (larger as u128, smaller as u128);
    let tenths = (l * 10 * 2 + s) / (2 * s);
    Some(format!("{}.{}×", tenths / 10, tenths % 10))
}

fn join_subjects(subjects: &[String]) -> String {
    match subjects {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{} and {}", init.join(", "), last),
    }
}

fn range_phrase(summary: &StatisticalSummary) -> String {
    match summary.metadata.plan_echo.time_range {
        Some(r) if r.from_year == r.until_year => format!(" in {}", r.from_year),
        Some(r) => format!(" between {} and {}", r.from_year, r.until_year),
        None => String::new(),
    }
}

fn trend_sentence(subject: &str, points: &[crate::types::DataPoint]) -> Option<String> {
    let (first, last) = (points.first()?, points.last()?);
    let change = format_pct_change(first.value, last.value)
        .unwrap_or_else(|| "from zero".to_string());
    let peak = points
        .iter()
        .fold(first, |best, p| if p.value > best.value { p } else { best });
    Some(format!(
        "{subject} went from {} in {} to {} in {} ({change}), peaking at {} in {}.",
        first.value, first.label, last.value, last.label, peak.value, peak.label
    ))
}

/// Deterministic narrative built from fixed templates.
///
/// Every number in the text is either copied from the summary or a percentage/ratio
/// derived from summary values and printed with a `%` or `×` suffix.
pub fn template_narrative(summary: &StatisticalSummary) -> Narrative {
    let plan = &summary.metadata.plan_echo;
    let source = format!(
        "Source: {} ({} records indexed).",
        summary.metadata.source_name, summary.metadata.dataset_size_estimate
    );
    let range = range_phrase(summary);

    if summary.is_empty() {
        return Narrative {
            text: format!(
                "No matching results were found for {}{range}. {source}",
                join_subjects(&plan.subjects)
            ),
            chart: None,
        };
    }

    let mut parts: Vec<String> = Vec::new();
    match summary.intent() {
        Intent::Trend => {
            parts.push(format!(
                "Publication trend for {}{range}.",
                join_subjects(&plan.subjects)
            ));
            for (subject, total) in &summary.totals {
                parts.push(format!("{subject}: {total} matching works in total."));
                if let Some(s) = summary.series_for(subject).and_then(|s| trend_sentence(subject, &s.points)) {
                    parts.push(s);
                }
            }
        }
        Intent::Comparison => {
            let listing: Vec<String> = summary
                .totals
                .iter()
                .map(|(s, t)| format!("{s}: {t}"))
                .collect();
            parts.push(format!(
                "Matching works{range} by subject: {}.",
                listing.join("; ")
            ));
            let nonzero: Vec<(&String, u64)> = summary
                .totals
                .iter()
                .filter(|(_, t)| **t > 0)
                .map(|(s, t)| (s, *t))
                .collect();
            let max = nonzero.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(a.0)));
            let min = nonzero.iter().min_by(|a, b| a.1.cmp(&b.1).then(a.0.cmp(b.0)));
            if let (Some(max), Some(min)) = (max, min) {
                if max.0 != min.0 {
                    if let Some(ratio) = format_ratio(max.1, min.1) {
                        parts.push(format!("{} has {ratio} as many as {}.", max.0, min.0));
                    }
                }
            }
            for (s, t) in &summary.totals {
                if *t == 0 {
                    parts.push(format!("{s} has no matching results."));
                }
            }
            for series in &summary.series {
                if let Some(s) = trend_sentence(&series.subject, &series.points) {
                    parts.push(s);
                }
            }
        }
        Intent::Ranking => {
            let dim = plan.rank_dimension.unwrap_or(RankDimension::Venue);
            for series in &summary.series {
                if series.points.is_empty() {
                    parts.push(format!("No {} data was found for {}.", dim.as_str(), series.subject));
                    continue;
                }
                let listing: Vec<String> = series
                    .points
                    .iter()
                    .map(|p| format!("{} ({})", p.label, p.value))
                    .collect();
                parts.push(format!(
                    "Leading {} for {}: {}.",
                    dim.plural_noun(),
                    series.subject,
                    listing.join("; ")
                ));
            }
            for (s, t) in &summary.totals {
                parts.push(format!("{s}: {t} matching works{range}."));
            }
        }
        Intent::Statistics => {
            for (s, t) in &summary.totals {
                parts.push(format!("{s}: {t} matching works{range}."));
            }
            for series in summary.series.iter().filter(|s| !s.points.is_empty()) {
                let listing: Vec<String> = series
                    .points
                    .iter()
                    .map(|p| format!("{} ({})", p.label, p.value))
                    .collect();
                parts.push(format!(
                    "Breakdown by work type for {}: {}.",
                    series.subject,
                    listing.join("; ")
                ));
            }
        }
    }
    parts.push(source);
    Narrative {
        text: parts.join(" "),
        chart: build_chart_config(summary),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisOutput {
    pub narrative: Narrative,
    pub usage: TokenUsage,
    pub usage_source: UsageSource,
}

/// Prompt for the narration call: the fixed system prompt plus the canonical summary.
pub fn build_synthesizer_prompt(summary: &StatisticalSummary) -> PromptSpec {
    PromptSpec {
        call_site: CallSite::Synthesizer,
        system_prompt: SYNTHESIZER_SYSTEM_PROMPT,
        user_content: serialize_canonical(summary),
    }
}

/// Narrates `summary` through `provider`. The chart is always computed locally.
pub fn synthesize(
    summary: &StatisticalSummary,
    provider: &dyn LlmProvider,
) -> Result<SynthesisOutput, ProviderError> {
    let response = provider.complete(&build_synthesizer_prompt(summary))?;
    let text = response.text.trim().to_string();
    if text.is_empty() {
        return Err(ProviderError::BadResponse("empty narrative".into()));
    }
    Ok(SynthesisOutput {
        narrative: Narrative {
            text,
            chart: build_chart_config(summary),
        },
        usage: response.usage,
        usage_source: response.usage_source,
    })
}

static LABELLED_DERIVED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[+-]?\d+\.\d(?:%|×)").unwrap());
static DIGIT_RUN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\d+").unwrap());

/// Numbers the summary makes available to a narrative.
pub fn grounded_numbers(summary: &StatisticalSummary) -> BTreeSet<u128> {
    let mut out = BTreeSet::new();
    let mut add_text = |s: &str| {
        for m in DIGIT_RUN.find_iter(s) {
            if let Ok(v) = m.as_str().parse::<u128>() {
                out.insert(v);
            }
        }
    };
    for s in &summary.series {
        add_text(&s.subject);
        for p in &s.points {
            add_text(&p.label);
        }
    }
    let plan = &summary.metadata.plan_echo;
    for s in &plan.subjects {
        add_text(s);
    }
    for k in summary.totals.keys() {
        add_text(k);
    }
    add_text(&summary.metadata.source_name);
    let mut values: Vec<u128> = summary
        .series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.value as u128))
        .chain(summary.totals.values().map(|v| *v as u128))
        .collect();
    values.push(summary.metadata.dataset_size_estimate as u128);
    if let Some(r) = plan.time_range {
        values.extend([r.from_year as u128, r.until_year as u128]);
    }
    if let Some(n) = plan.top_n {
        values.push(n as u128);
    }
    out.extend(values);
    out
}

/// Digit runs in `text` that are neither labelled percentages/ratios nor summary values.
pub fn ungrounded_numbers(text: &str, summary: &StatisticalSummary) -> Vec<String> {
    let grounded = grounded_numbers(summary);
    let stripped = LABELLED_DERIVED.replace_all(text, " ");
    DIGIT_RUN
        .find_iter(&stripped)
        .map(|m| m.as_str())
        .filter(|run| run.parse::<u128>().map_or(true, |v| !grounded.contains(&v)))
        .map(str::to_string)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasources::synthetic::synthetic_snapshot;
    use crate::provider::MockProvider;
    use crate::tokens::estimate_tokens;
    use crate::types::{DataPoint, QueryPlan, Series, SummaryMetadata, YearRange};

    fn summary(intent: Intent, series: Vec<Series>, totals: &[(&str, u64)]) -> StatisticalSummary {
        let subjects: Vec<String> = totals.iter().map(|(s, _)| s.to_string()).collect();
        StatisticalSummary {
            series,
            totals: totals.iter().map(|(s, v)| (s.to_string(), *v)).collect(),
            metadata: SummaryMetadata {
                source_name: "synthetic".into(),
                dataset_size_estimate: 1000,
                retrieved_at: synthetic_snapshot(),
                plan_echo: QueryPlan {
                    intent,
                    subjects,
                    time_range: (intent == Intent::Trend).then(|| YearRange::new(2015, 2024)),
                    top_n: (intent == Intent::Ranking).then_some(10),
                    rank_dimension: (intent == Intent::Ranking).then_some(RankDimension::Venue),
                },
            },
        }
    }

    fn series(subject: &str, points: &[(&str, u64)]) -> Series {
        Series {
            subject: subject.into(),
            points: points.iter().map(|(l, v)| DataPoint::new(*l, *v)).collect(),
        }
    }

    #[test]
    fn percent_and_ratio_formatting() {
        assert_eq!(format_pct_change(100, 150).as_deref(), Some("+50.0%"));
        assert_eq!(format_pct_change(200, 150).as_deref(), Some("-25.0%"));
        assert_eq!(format_pct_change(3, 4).as_deref(), Some("+33.3%"));
        assert_eq!(format_pct_change(8, 9).as_deref(), Some("+12.5%"));
        assert_eq!(format_pct_change(16, 17).as_deref(), Some("+6.3%"));
        assert_eq!(format_pct_change(0, 5), None);
        assert_eq!(format_ratio(30, 10).as_deref(), Some("3.0×"));
        assert_eq!(format_ratio(20, 8).as_deref(), Some("2.5×"));
        assert_eq!(format_ratio(1, 0), None);
    }

    #[test]
    fn trend_narrative() {
        let s = summary(
            Intent::Trend,
            vec![series("x", &[("2015", 100), ("2024", 150)])],
            &[("x", 250)],
        );
        let n = template_narrative(&s);
        for needle in ["100", "150", "+50.0%"] {
            assert!(n.text.contains(needle), "{}", n.text);
        }
        assert!(ungrounded_numbers(&n.text, &s).is_empty());
        assert_eq!(n.chart.unwrap().chart_type, ChartType::Line);
    }

    #[test]
    fn trend_from_zero() {
        let s = summary(Intent::Trend, vec![series("x", &[("2015", 0), ("2016", 4)])], &[("x", 4)]);
        assert!(template_narrative(&s).text.contains("from zero"));
    }

    #[test]
    fn comparison_narrative() {
        let s = summary(Intent::Comparison, vec![], &[("A", 10), ("B", 30)]);
        let n = template_narrative(&s);
        assert!(n.text.contains("10") && n.text.contains("30") && n.text.contains("3.0×"), "{}", n.text);
        assert!(ungrounded_numbers(&n.text, &s).is_empty());
        assert_eq!(n.chart.unwrap().chart_type, ChartType::Bar);
    }

    #[test]
    fn empty_summary_has_no_chart() {
        let s = summary(Intent::Statistics, vec![series("a", &[])], &[("a", 0)]);
        let n = template_narrative(&s);
        assert!(n.text.contains("No matching results"));
        assert!(n.chart.is_none());
        assert!(build_chart_config(&s).is_none());
    }

    #[test]
    fn chart_mappings() {
        let t = summary(
            Intent::Trend,
            vec![series("a", &[("2020", 1)]), series("b", &[("2020", 2)])],
            &[("a", 1), ("b", 2)],
        );
        let c = build_chart_config(&t).unwrap();
        assert_eq!((c.chart_type, c.series_refs.len()), (ChartType::Line, 2));

        let pts: Vec<(String, u64)> = (0..10).map(|i| (format!("V{i}"), 100 - i)).collect();
        let pts: Vec<(&str, u64)> = pts.iter().map(|(l, v)| (l.as_str(), *v)).collect();
        let r = summary(Intent::Ranking, vec![series("g", &pts)], &[("g", 500)]);
        let c = build_chart_config(&r).unwrap();
        assert_eq!(c.chart_type, ChartType::Bar);
        assert_eq!(c.x_label, "venue");
        assert_eq!(c.series_refs, ["g"]);

        let g = summary(
            Intent::Comparison,
            vec![series("a", &[("2020", 1)]), series("b", &[("2020", 2)])],
            &[("a", 1), ("b", 2)],
        );
        assert_eq!(build_chart_config(&g).unwrap().chart_type, ChartType::GroupedBar);
    }

    #[test]
    fn mock_synthesis_costs_system_plus_summary() {
        let s = summary(Intent::Comparison, vec![], &[("A", 10), ("B", 30)]);
        let out = synthesize(&s, &MockProvider::new()).unwrap();
        assert_eq!(
            out.usage.input_tokens,
            estimate_tokens(SYNTHESIZER_SYSTEM_PROMPT) + estimate_tokens(&serialize_canonical(&s))
        );
        assert_eq!(out.narrative, template_narrative(&s));
    }

    #[test]
    fn flags_invented_numbers() {
        let s = summary(Intent::Comparison, vec![], &[("A", 10), ("B", 30)]);
        assert_eq!(ungrounded_numbers("A has 10, B has 31", &s), ["31"]);
        assert!(ungrounded_numbers("up +12.5% and 3.0×", &s).is_empty());
    }
}
