//! Domain types shared by every layer of the pipeline.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Datelike, Utc};
use serde::{Deserialize, Serialize};

use crate::error::PlanError;

/// Maximum length of a user question, in characters.
pub const MAX_QUERY_CHARS: usize = 1000;
/// Upper bound on subjects in a plan.
pub const MAX_SUBJECTS: usize = 5;
/// Upper bound on the characters of one subject.
pub const MAX_SUBJECT_CHARS: usize = 120;
/// Upper bound on `top_n` for ranking plans.
pub const MAX_TOP_N: u32 = 20;
/// Earliest year accepted in a plan's time range.
pub const MIN_YEAR: i32 = 1600;

/// A natural-language question, trimmed and length-checked.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct UserQuery(String);

impl UserQuery {
    pub fn new(text: impl AsRef<str>) -> Result<Self, PlanError> {
        let trimmed = text.as_ref().trim();
        if trimmed.is_empty() {
            return Err(PlanError::EmptyQuery);
        }
        let chars = trimmed.chars().count();
        if chars > MAX_QUERY_CHARS {
            return Err(PlanError::QueryTooLong(chars));
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for UserQuery {
    type Error = PlanError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<UserQuery> for String {
    fn from(q: UserQuery) -> Self {
        q.0
    }
}

impl fmt::Display for UserQuery {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// The four analysis intents a plan can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Trend,
    Comparison,
    Ranking,
    Statistics,
}

impl Intent {
    pub const ALL: [Intent; 4] = [
        Intent::Trend,
        Intent::Comparison,
        Intent::Ranking,
        Intent::Statistics,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Trend => "trend",
            Intent::Comparison => "comparison",
            Intent::Ranking => "ranking",
            Intent::Statistics => "statistics",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "trend" => Some(Intent::Trend),
            "comparison" => Some(Intent::Comparison),
            "ranking" => Some(Intent::Ranking),
            "statistics" => Some(Intent::Statistics),
            _ => None,
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Facet dimension a ranking is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankDimension {
    Venue,
    Publisher,
    WorkType,
}

impl RankDimension {
    pub const ALL: [RankDimension; 3] = [
        RankDimension::Venue,
        RankDimension::Publisher,
        RankDimension::WorkType,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RankDimension::Venue => "venue",
            RankDimension::Publisher => "publisher",
            RankDimension::WorkType => "work_type",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim() {
            "venue" => Some(RankDimension::Venue),
            "publisher" => Some(RankDimension::Publisher),
            "work_type" => Some(RankDimension::WorkType),
            _ => None,
        }
    }

    /// Human-readable plural used in narratives and chart axes.
    pub fn plural_noun(self) -> &'static str {
        match self {
            RankDimension::Venue => "venues",
            RankDimension::Publisher => "publishers",
            RankDimension::WorkType => "work types",
        }
    }
}

/// Inclusive publication-year window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct YearRange {
    pub from_year: i32,
    pub until_year: i32,
}

impl YearRange {
    pub fn new(from_year: i32, until_year: i32) -> Self {
        Self {
            from_year,
            until_year,
        }
    }

    /// Number of years covered, counting both ends.
    pub fn span(&self) -> u32 {
        (self.until_year - self.from_year + 1).max(0) as u32
    }

    pub fn contains(&self, year: i32) -> bool {
        year >= self.from_year && year <= self.until_year
    }

    pub fn years(&self) -> impl Iterator<Item = i32> {
        self.from_year..=self.until_year
    }
}

/// Structured plan produced by the Reasoner.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QueryPlan {
    pub intent: Intent,
    pub subjects: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<YearRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_n: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank_dimension: Option<RankDimension>,
}

impl QueryPlan {
    /// Checks every plan invariant against the given calendar year.
    pub fn validate(&self, current_year: i32) -> Result<(), PlanError> {
        if self.subjects.is_empty() || self.subjects.len() > MAX_SUBJECTS {
            return Err(PlanError::SubjectCount(self.subjects.len()));
        }
        for s in &self.subjects {
            let n = s.chars().count();
            if s.trim() != s || n == 0 || n > MAX_SUBJECT_CHARS {
                return Err(PlanError::BadSubject(s.clone()));
            }
        }
        if let Some(r) = self.time_range {
            let max_year = current_year + 1;
            if r.from_year < MIN_YEAR || r.until_year > max_year {
                return Err(PlanError::YearOutOfBounds {
                    from_year: r.from_year,
                    until_year: r.until_year,
                    max_year,
                });
            }
            if r.from_year > r.until_year {
                return Err(PlanError::InvertedRange {
                    from_year: r.from_year,
                    until_year: r.until_year,
                });
            }
        }
        match self.intent {
            Intent::Trend if self.time_range.is_none() => {
                return Err(PlanError::Missing("time_range"));
            }
            Intent::Comparison if self.subjects.len() < 2 => {
                return Err(PlanError::ComparisonNeedsTwo);
            }
            Intent::Ranking => {
                match self.top_n {
                    None => return Err(PlanError::Missing("top_n")),
                    Some(n) if n == 0 || n > MAX_TOP_N => return Err(PlanError::TopN(n)),
                    _ => {}
                }
                if self.rank_dimension.is_none() {
                    return Err(PlanError::Missing("rank_dimension"));
                }
            }
            _ => {}
        }
        if self.intent != Intent::Ranking && self.top_n.is_some_and(|n| n == 0 || n > MAX_TOP_N) {
            return Err(PlanError::TopN(self.top_n.unwrap_or(0)));
        }
        Ok(())
    }
}

/// A labelled count.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DataPoint {
    pub label: String,
    pub value: u64,
}

impl DataPoint {
    pub fn new(label: impl Into<String>, value: u64) -> Self {
        Self {
            label: label.into(),
            value,
        }
    }
}

/// Per-subject ordered series of data points.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Series {
    pub subject: String,
    pub points: Vec<DataPoint>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryMetadata {
    pub source_name: String,
    pub dataset_size_estimate: u64,
    pub retrieved_at: DateTime<Utc>,
    pub plan_echo: QueryPlan,
}

/// The bounded aggregate handed from the Executor to the Synthesizer.
///
/// Carries counts and labels only. Nothing in here identifies an individual work.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatisticalSummary {
    pub series: Vec<Series>,
    pub totals: BTreeMap<String, u64>,
    pub metadata: SummaryMetadata,
}

impl StatisticalSummary {
    pub fn intent(&self) -> Intent {
        self.metadata.plan_echo.intent
    }

    /// True when nothing matched: every total and every point is zero.
    pub fn is_empty(&self) -> bool {
        self.totals.values().all(|v| *v == 0)
            && self
                .series
                .iter()
                .all(|s| s.points.iter().all(|p| p.value == 0))
    }

    pub fn series_for(&self, subject: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.subject == subject)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartType {
    Line,
    Bar,
    GroupedBar,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChartConfig {
    pub chart_type: ChartType,
    pub x_label: String,
    pub y_label: String,
    pub series_refs: Vec<String>,
}

/// Synthesizer output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Narrative {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chart: Option<ChartConfig>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl TokenUsage {
    pub const ZERO: TokenUsage = TokenUsage {
        input_tokens: 0,
        output_tokens: 0,
    };

    pub fn new(input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            input_tokens,
            output_tokens,
        }
    }

    pub fn total(&self) -> u64 {
        self.input_tokens + self.output_tokens
    }
}

impl std::ops::Add for TokenUsage {
    type Output = TokenUsage;

    fn add(self, rhs: TokenUsage) -> TokenUsage {
        TokenUsage {
            input_tokens: self.input_tokens + rhs.input_tokens,
            output_tokens: self.output_tokens + rhs.output_tokens,
        }
    }
}

/// Whether a usage figure came from the local estimator or the provider's own count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UsageSource {
    #[default]
    Estimated,
    ProviderReported,
}

/// Per-layer token accounting for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunLedger {
    pub reasoner: TokenUsage,
    pub executor: TokenUsage,
    pub synthesizer: TokenUsage,
    #[serde(default)]
    pub usage_source: UsageSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed,
}

/// Why a run did not complete.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    PlanInvalid,
    SourceError,
    ProviderError,
}

impl FailureReason {
    pub fn as_str(self) -> &'static str {
        match self {
            FailureReason::PlanInvalid => "plan_invalid",
            FailureReason::SourceError => "source_error",
            FailureReason::ProviderError => "provider_error",
        }
    }
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Persisted outcome of a single pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub query: UserQuery,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<QueryPlan>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<StatisticalSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<Narrative>,
    pub ledger: RunLedger,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure_detail: Option<String>,
}

impl RunRecord {
    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }
}

pub fn current_year() -> i32 {
    Utc::now().year()
}
