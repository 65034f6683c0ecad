use thiserror::Error;

use crate::types::FailureReason;

/// A question or plan that cannot be turned into a valid `QueryPlan`.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PlanError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("query has {0} characters, limit is 1000")]
    QueryTooLong(usize),
    #[error("no subject could be extracted from the query")]
    NoSubject,
    #[error("malformed plan JSON: {0}")]
    Malformed(String),
    #[error("unknown intent {0:?}")]
    UnknownIntent(String),
    #[error("unknown rank dimension {0:?}")]
    UnknownDimension(String),
    #[error("plan must have 1..=5 subjects, got {0}")]
    SubjectCount(usize),
    #[error("invalid subject {0:?}")]
    BadSubject(String),
    #[error("comparison needs at least two subjects")]
    ComparisonNeedsTwo,
    #[error("missing required field {0}")]
    Missing(&'static str),
    #[error("top_n must be in 1..=20, got {0}")]
    TopN(u32),
    #[error("from_year {from_year} is after until_year {until_year}")]
    InvertedRange { from_year: i32, until_year: i32 },
    #[error("years {from_year}..{until_year} outside 1600..={max_year}")]
    YearOutOfBounds {
        from_year: i32,
        until_year: i32,
        max_year: i32,
    },
}

/// Failure reported by a data source.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SourceError {
    #[error("invalid source request: {0}")]
    Precondition(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("HTTP status {status} from {url}")]
    Status { status: u16, url: String },
    #[error("rate limited after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("unexpected response: {0}")]
    BadResponse(String),
}

/// Failure reported by a language-model provider.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProviderError {
    #[error("provider not configured: {0}")]
    Config(String),
    #[error("provider timed out after {attempts} attempts")]
    Timeout { attempts: u32 },
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("provider transport failure: {0}")]
    Transport(String),
    #[error("unexpected provider response: {0}")]
    BadResponse(String),
}

/// Any error that terminates a pipeline run.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl PipelineError {
    pub fn reason(&self) -> FailureReason {
        match self {
            PipelineError::Plan(_) => FailureReason::PlanInvalid,
            PipelineError::Source(_) => FailureReason::SourceError,
            PipelineError::Provider(_) => FailureReason::ProviderError,
        }
    }
}
