//! Token estimation, canonical summary serialization and ledger arithmetic.

use serde::Serialize;

use crate::types::{RunLedger, StatisticalSummary};

/// Hard upper bound on the estimated token size of a canonical summary.
pub const K_MAX: u64 = 800;
/// Maximum points kept in one series.
pub const MAX_POINTS: usize = 50;
/// Maximum series kept in one summary.
pub const MAX_SERIES: usize = 5;
/// Maximum characters in a data-point label.
pub const MAX_LABEL_CHARS: usize = 80;

/// Deterministic stand-in for a tokenizer: one token per four characters, rounded up.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

/// Compact JSON with lexicographically ordered keys.
///
/// Goes through `serde_json::Value`, whose object map is a `BTreeMap`, so field
/// declaration order never leaks into the output.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("domain types always serialize");
    serde_json::to_string(&v).expect("json value always serializes")
}

pub fn serialize_canonical(summary: &StatisticalSummary) -> String {
    to_canonical_json(summary)
}

pub fn summary_tokens(summary: &StatisticalSummary) -> u64 {
    estimate_tokens(&serialize_canonical(summary))
}

/// Total tokens across the three layers.
pub fn ledger_total(ledger: &RunLedger) -> u64 {
    ledger.reasoner.total() + ledger.executor.total() + ledger.synthesizer.total()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SummaryStats {
    pub mean: f64,
    pub stddev: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot summarize an empty list of values")]
pub struct EmptyStats;

/// Mean and sample (n-1) standard deviation.
pub fn summary_stats(values: &[u64]) -> Result<SummaryStats, EmptyStats> {
    if values.is_empty() {
        return Err(EmptyStats);
    }
    let n = values.len() as f64;
    let mean = values.iter().map(|v| *v as f64).sum::<f64>() / n;
    let stddev = if values.len() == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (*v as f64 - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    };
    Ok(SummaryStats { mean, stddev })
}
