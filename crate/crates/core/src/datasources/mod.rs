//! Aggregation-only access to a corpus of scholarly records.
//!
//! Every operation returns counts and labels. No source implementation hands back
//! titles, authors or identifiers of individual works.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::SourceError;
use crate::types::{RankDimension, YearRange};

pub mod crossref;
pub mod http;
pub mod oracle;
pub mod synthetic;

pub use crossref::{CrossrefConfig, CrossrefSource, WorksRequest};
pub use synthetic::{generate_synthetic, SyntheticRecord, SyntheticSource, WorkType};

/// Widest year span a single `yearly_counts` call may cover.
pub const MAX_YEAR_SPAN: u32 = 50;
/// Upper bound on facet bucket limits.
pub const MAX_FACET_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FacetBucket {
    pub label: String,
    pub count: u64,
}

impl FacetBucket {
    pub fn new(label: impl Into<String>, count: u64) -> Self {
        Self {
            label: label.into(),
            count,
        }
    }
}

/// Work performed by a source so far: requests issued and records touched locally.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceStats {
    pub requests: u64,
    pub records_scanned: u64,
}

/// The capability the Executor runs plans against.
pub trait DataSource: Send + Sync {
    fn source_name(&self) -> &str;

    fn count_total(&self, subject: &str, range: Option<YearRange>) -> Result<u64, SourceError>;

    /// One `(year, count)` pair per year in `from_year..=until_year`, ascending.
    fn yearly_counts(
        &self,
        subject: &str,
        from_year: i32,
        until_year: i32,
    ) -> Result<Vec<(i32, u64)>, SourceError>;

    /// Top `limit` buckets ordered by count descending, then label ascending.
    fn facet_counts(
        &self,
        subject: &str,
        dimension: RankDimension,
        limit: usize,
    ) -> Result<Vec<FacetBucket>, SourceError>;

    fn dataset_size_estimate(&self) -> Result<u64, SourceError>;

    /// Timestamp stamped into summaries built from this source.
    fn retrieved_at(&self) -> DateTime<Utc>;

    fn stats(&self) -> SourceStats;
}

pub(crate) fn check_subject(subject: &str) -> Result<(), SourceError> {
    if subject.trim().is_empty() {
        return Err(SourceError::Precondition("subject must not be empty".into()));
    }
    Ok(())
}

pub(crate) fn check_year_span(from_year: i32, until_year: i32) -> Result<(), SourceError> {
    if from_year > until_year {
        return Err(SourceError::Precondition(format!(
            "from_year {from_year} is after until_year {until_year}"
        )));
    }
    let span = (until_year - from_year + 1) as u32;
    if span > MAX_YEAR_SPAN {
        return Err(SourceError::Precondition(format!(
            "year span {span} exceeds {MAX_YEAR_SPAN}"
        )));
    }
    Ok(())
}

pub(crate) fn check_limit(limit: usize) -> Result<(), SourceError> {
    if limit == 0 || limit > MAX_FACET_LIMIT {
        return Err(SourceError::Precondition(format!(
            "facet limit must be in 1..={MAX_FACET_LIMIT}, got {limit}"
        )));
    }
    Ok(())
}

/// Sorts by count descending, then label ascending (byte order), and keeps `limit`.
pub fn rank_buckets(mut buckets: Vec<FacetBucket>, limit: usize) -> Vec<FacetBucket> {
    buckets.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label.cmp(&b.label)));
    buckets.truncate(limit);
    buckets
}

impl<T: DataSource + ?Sized> DataSource for std::sync::Arc<T> {
    fn source_name(&self) -> &str {
        (**self).source_name()
    }
    fn count_total(&self, subject: &str, range: Option<YearRange>) -> Result<u64, SourceError> {
        (**self).count_total(subject, range)
    }
    fn yearly_counts(
        &self,
        subject: &str,
        from_year: i32,
        until_year: i32,
    ) -> Result<Vec<(i32, u64)>, SourceError> {
        (**self).yearly_counts(subject, from_year, until_year)
    }
    fn facet_counts(
        &self,
        subject: &str,
        dimension: RankDimension,
        limit: usize,
    ) -> Result<Vec<FacetBucket>, SourceError> {
        (**self).facet_counts(subject, dimension, limit)
    }
    fn dataset_size_estimate(&self) -> Result<u64, SourceError> {
        (**self).dataset_size_estimate()
    }
    fn retrieved_at(&self) -> DateTime<Utc> {
        (**self).retrieved_at()
    }
    fn stats(&self) -> SourceStats {
        (**self).stats()
    }
}
