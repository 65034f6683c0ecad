//! Sequential Reasoner → Executor → Synthesizer orchestration.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::datasources::DataSource;
use crate::error::{PipelineError, PlanError};
use crate::executor::{self, ExecuteFn};
use crate::provider::LlmProvider;
use crate::reasoner::{self, ReasonerError};
use crate::synthesizer::{self, SYNTHESIZER_SYSTEM_PROMPT};
use crate::tokens::{estimate_tokens, ledger_total, summary_tokens};
use crate::types::{
    Narrative, QueryPlan, RunLedger, RunRecord, RunStatus, StatisticalSummary, TokenUsage,
    UsageSource, UserQuery,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerEventKind {
    ReasonerStarted,
    ReasonerCompleted,
    ExecutorStarted,
    ExecutorCompleted,
    SynthesizerStarted,
    SynthesizerCompleted,
    RunCompleted,
    RunFailed,
}

impl LayerEventKind {
    /// Lifecycle of a successful run, in order.
    pub const LIFECYCLE: [LayerEventKind; 7] = [
        LayerEventKind::ReasonerStarted,
        LayerEventKind::ReasonerCompleted,
        LayerEventKind::ExecutorStarted,
        LayerEventKind::ExecutorCompleted,
        LayerEventKind::SynthesizerStarted,
        LayerEventKind::SynthesizerCompleted,
        LayerEventKind::RunCompleted,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, LayerEventKind::RunCompleted | LayerEventKind::RunFailed)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerEventKind::ReasonerStarted => "reasoner_started",
            LayerEventKind::ReasonerCompleted => "reasoner_completed",
            LayerEventKind::ExecutorStarted => "executor_started",
            LayerEventKind::ExecutorCompleted => "executor_completed",
            LayerEventKind::SynthesizerStarted => "synthesizer_started",
            LayerEventKind::SynthesizerCompleted => "synthesizer_completed",
            LayerEventKind::RunCompleted => "run_completed",
            LayerEventKind::RunFailed => "run_failed",
        }
    }
}

/// A snapshot of one layer's input or output, emitted as the run progresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEvent {
    pub run_id: String,
    pub event: LayerEventKind,
    pub payload: Value,
    pub at: DateTime<Utc>,
}

/// True when `kinds` is a prefix of the lifecycle ending in exactly one terminal event.
pub fn is_valid_event_sequence(kinds: &[LayerEventKind]) -> bool {
    let Some((last, body)) = kinds.split_last() else {
        return false;
    };
    if body.iter().any(|k| k.is_terminal()) || !last.is_terminal() {
        return false;
    }
    let prefix_ok = body
        .iter()
        .zip(LayerEventKind::LIFECYCLE.iter())
        .all(|(a, b)| a == b);
    match last {
        LayerEventKind::RunCompleted => kinds == LayerEventKind::LIFECYCLE,
        _ => prefix_ok && body.len() < 6,
    }
}

pub trait EventSink: Send + Sync {
    fn emit(&self, event: LayerEvent);
}

/// Discards events.
pub struct NoEvents;

impl EventSink for NoEvents {
    fn emit(&self, _event: LayerEvent) {}
}

impl<F: Fn(LayerEvent) + Send + Sync> EventSink for F {
    fn emit(&self, event: LayerEvent) {
        self(event)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonerMode {
    /// Deterministic grammar, no model call.
    RuleBased,
    /// Plan requested from the provider.
    #[default]
    Provider,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthesizerMode {
    /// Fixed templates, no model call.
    Template,
    /// Narrative requested from the provider.
    #[default]
    Provider,
}

/// Pipeline wiring. The executor is a plain function so alternative implementations
/// can be swapped in for negative-control experiments.
#[derive(Clone, Copy)]
pub struct Pipeline {
    pub reasoner: ReasonerMode,
    pub synthesizer: SynthesizerMode,
    pub executor: ExecuteFn,
}

impl Default for Pipeline {
    fn default() -> Self {
        Self {
            reasoner: ReasonerMode::Provider,
            synthesizer: SynthesizerMode::Provider,
            executor: executor::execute,
        }
    }
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline")
            .field("reasoner", &self.reasoner)
            .field("synthesizer", &self.synthesizer)
            .finish_non_exhaustive()
    }
}

struct Emitter<'a> {
    run_id: &'a str,
    sink: &'a dyn EventSink,
}

impl Emitter<'_> {
    fn emit(&self, event: LayerEventKind, payload: Value) {
        self.sink.emit(LayerEvent {
            run_id: self.run_id.to_string(),
            event,
            payload,
            at: Utc::now(),
        });
    }
}

#[derive(Default)]
struct Progress {
    plan: Option<QueryPlan>,
    summary: Option<StatisticalSummary>,
    narrative: Option<Narrative>,
    ledger: RunLedger,
}

pub fn new_run_id() -> String {
    uuid::Uuid::new_v4().to_string()
}

impl Pipeline {
    pub fn offline_deterministic() -> Self {
        Self {
            reasoner: ReasonerMode::RuleBased,
            synthesizer: SynthesizerMode::Template,
            ..Self::default()
        }
    }

    pub fn with_executor(mut self, executor: ExecuteFn) -> Self {
        self.executor = executor;
        self
    }

    pub fn run(
        &self,
        query: &UserQuery,
        source: &dyn DataSource,
        provider: &dyn LlmProvider,
    ) -> RunRecord {
        self.run_observed(&new_run_id(), query, source, provider, &NoEvents)
    }

    /// Runs the three layers strictly in sequence, emitting lifecycle events to `sink`.
    pub fn run_observed(
        &self,
        run_id: &str,
        query: &UserQuery,
        source: &dyn DataSource,
        provider: &dyn LlmProvider,
        sink: &dyn EventSink,
    ) -> RunRecord {
        let started_at = Utc::now();
        let events = Emitter { run_id, sink };
        let mut progress = Progress::default();
        let outcome = self.run_layers(query, source, provider, &events, &mut progress);
        if self.uses_provider() && provider.reports_usage() {
            progress.ledger.usage_source = UsageSource::ProviderReported;
        }

        let (status, failure_reason, failure_detail) = match &outcome {
            Ok(()) => {
                events.emit(
                    LayerEventKind::RunCompleted,
                    json!({ "ledger": progress.ledger, "total_tokens": ledger_total(&progress.ledger) }),
                );
                (RunStatus::Completed, None, None)
            }
            Err(e) => {
                events.emit(
                    LayerEventKind::RunFailed,
                    json!({ "failure_reason": e.reason(), "detail": e.to_string() }),
                );
                (RunStatus::Failed, Some(e.reason()), Some(e.to_string()))
            }
        };

        RunRecord {
            run_id: run_id.to_string(),
            query: query.clone(),
            plan: progress.plan,
            summary: progress.summary,
            narrative: progress.narrative,
            ledger: progress.ledger,
            started_at,
            finished_at: Utc::now(),
            status,
            failure_reason,
            failure_detail,
        }
    }

    fn uses_provider(&self) -> bool {
        self.reasoner == ReasonerMode::Provider || self.synthesizer == SynthesizerMode::Provider
    }

    fn run_layers(
        &self,
        query: &UserQuery,
        source: &dyn DataSource,
        provider: &dyn LlmProvider,
        events: &Emitter<'_>,
        progress: &mut Progress,
    ) -> Result<(), PipelineError> {
        events.emit(
            LayerEventKind::ReasonerStarted,
            json!({ "query": query.as_str(), "mode": self.reasoner }),
        );
        let (plan, usage) = match self.reasoner {
            ReasonerMode::RuleBased => (reasoner::rule_based_parse(query)?, TokenUsage::ZERO),
            ReasonerMode::Provider => match reasoner::parse_query(query, provider) {
                Ok(ok) => ok,
                Err(ReasonerError::Plan { error, usage }) => {
                    progress.ledger.reasoner = usage;
                    return Err(error.into());
                }
                Err(ReasonerError::Provider(e)) => return Err(e.into()),
            },
        };
        progress.ledger.reasoner = usage;
        progress.plan = Some(plan.clone());
        events.emit(
            LayerEventKind::ReasonerCompleted,
            json!({ "plan": plan, "usage": usage }),
        );

        events.emit(LayerEventKind::ExecutorStarted, json!({ "plan": plan }));
        let summary = (self.executor)(&plan, source)?;
        progress.ledger.executor = TokenUsage::ZERO;
        events.emit(
            LayerEventKind::ExecutorCompleted,
            json!({
                "summary": summary,
                "summary_tokens": summary_tokens(&summary),
                "usage": TokenUsage::ZERO,
            }),
        );
        progress.summary = Some(summary.clone());

        events.emit(
            LayerEventKind::SynthesizerStarted,
            json!({
                "mode": self.synthesizer,
                "system_prompt_tokens": estimate_tokens(SYNTHESIZER_SYSTEM_PROMPT),
                "summary_tokens": summary_tokens(&summary),
            }),
        );
        let (narrative, usage) = match self.synthesizer {
            SynthesizerMode::Template => (synthesizer::template_narrative(&summary), TokenUsage::ZERO),
            SynthesizerMode::Provider => {
                let out = synthesizer::synthesize(&summary, provider)?;
                (out.narrative, out.usage)
            }
        };
        progress.ledger.synthesizer = usage;
        events.emit(
            LayerEventKind::SynthesizerCompleted,
            json!({ "narrative": narrative, "usage": usage }),
        );
        progress.narrative = Some(narrative);
        Ok(())
    }
}

/// Runs the default pipeline: provider-backed Reasoner and Synthesizer.
pub fn run_pipeline(
    query: &UserQuery,
    source: &dyn DataSource,
    provider: &dyn LlmProvider,
) -> RunRecord {
    Pipeline::default().run(query, source, provider)
}

/// Parses raw question text, mapping an invalid question to a plan error.
pub fn user_query(text: &str) -> Result<UserQuery, PlanError> {
    UserQuery::new(text)
}
