//! Evaluation harness: naive baseline, naive cost model, benchmark protocol,
//! dataset-size invariance check and figure data export.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datasources::synthetic::{word_tokens, SyntheticRecord, SyntheticSource};
use crate::datasources::DataSource;
use crate::error::ProviderError;
use crate::pipeline::Pipeline;
use crate::provider::{CallSite, LlmProvider, MockProvider, PromptSpec};
use crate::tokens::{ledger_total, summary_stats};
use crate::types::{FailureReason, Intent, RunLedger, RunStatus, TokenUsage, UserQuery};

/// Records placed in each naive baseline prompt.
pub const NAIVE_RECORDS_PER_PROMPT: usize = 50;
/// Observed naive baseline mean used for the reference calibration.
pub const REFERENCE_NAIVE_MEAN: f64 = 5934.0;
/// Prompt overhead assumed by the reference calibration.
pub const REFERENCE_PROMPT_OVERHEAD: u64 = 200;
/// Matching record count of the full-scale scenario.
pub const FULL_SCALE_N: u64 = 16_273_710;
/// Largest accepted flatness ratio.
pub const FLATNESS_TOLERANCE: f64 = 1.05;
/// Dataset sizes checked by default.
pub const DEFAULT_SIZES: [usize; 5] = [100, 1_000, 10_000, 100_000, 1_000_000];
/// Question held fixed while the dataset grows.
pub const DEFAULT_VERIFY_QUERY: &str = "How has machine learning research grown from 2015 to 2024?";

pub const NAIVE_SYSTEM_PROMPT: &str = "You are a research assistant. Answer the question \
using only the article records below. Each line is one record in JSON.";

/// Default benchmark suite, five questions per intent.
pub const DEFAULT_SUITE_JSON: &str = include_str!("../suites/default.json");

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("suite file: {0}")]
    Io(#[from] std::io::Error),
    #[error("suite file is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("suite entry {id}: {reason}")]
    BadEntry { id: String, reason: String },
    #[error("suite must hold 5 questions per intent, found {found} for {intent}")]
    Shape { intent: &'static str, found: usize },
    #[error("sizes must be non-empty, positive and ascending")]
    BadSizes,
    #[error("verification question: {0}")]
    Query(String),
    #[error("csv export: {0}")]
    Csv(#[from] csv::Error),
}

// ---------------------------------------------------------------------------
// Naive cost model
// ---------------------------------------------------------------------------

/// Affine token cost of sending `n` raw records plus a fixed prompt.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NaiveCostModel {
    pub mean_record_tokens: f64,
    pub prompt_overhead: u64,
}

impl NaiveCostModel {
    pub fn new(mean_record_tokens: f64, prompt_overhead: u64) -> Option<Self> {
        (mean_record_tokens > 0.0 && mean_record_tokens.is_finite()).then_some(Self {
            mean_record_tokens,
            prompt_overhead,
        })
    }

    /// Derives the per-record mean from an observed prompt size over `records` records.
    pub fn calibrate(observed_mean: f64, records: usize, prompt_overhead: u64) -> Option<Self> {
        if records == 0 {
            return None;
        }
        Self::new(
            (observed_mean - prompt_overhead as f64) / records as f64,
            prompt_overhead,
        )
    }

    /// Calibration from a 5,934-token naive mean over 50 records with a 200-token prompt.
    pub fn reference() -> Self {
        Self::calibrate(
            REFERENCE_NAIVE_MEAN,
            NAIVE_RECORDS_PER_PROMPT,
            REFERENCE_PROMPT_OVERHEAD,
        )
        .expect("reference calibration is positive")
    }
}

pub fn naive_cost(n: u64, model: &NaiveCostModel) -> f64 {
    n as f64 * model.mean_record_tokens + model.prompt_overhead as f64
}

/// Fraction of naive tokens saved. Negative when `res_mean` exceeds `naive_mean`;
/// zero when `naive_mean` is not positive.
pub fn compute_savings(res_mean: f64, naive_mean: f64) -> f64 {
    if naive_mean <= 0.0 {
        return 0.0;
    }
    (naive_mean - res_mean) / naive_mean
}

// ---------------------------------------------------------------------------
// Naive baseline
// ---------------------------------------------------------------------------

pub fn build_naive_prompt(query: &UserQuery, records: &[SyntheticRecord]) -> PromptSpec {
    let mut user_content = String::new();
    for r in records {
        user_content.push_str(&r.to_json_line());
        user_content.push('\n');
    }
    user_content.push_str("\nQuestion: ");
    user_content.push_str(query.as_str());
    PromptSpec {
        call_site: CallSite::NaiveBaseline,
        system_prompt: NAIVE_SYSTEM_PROMPT,
        user_content,
    }
}

/// Sends every record plus the question in a single prompt and returns the usage.
///
/// # Panics
///
/// Panics if `records` is empty.
pub fn run_naive_baseline(
    query: &UserQuery,
    records: &[SyntheticRecord],
    provider: &dyn LlmProvider,
) -> Result<TokenUsage, ProviderError> {
    assert!(!records.is_empty(), "naive baseline needs at least one record");
    Ok(provider.complete(&build_naive_prompt(query, records))?.usage)
}

/// Up to `k` records matching `subject`; falls back to the first `k` records when none match.
pub fn naive_records_for(corpus: &[SyntheticRecord], subject: &str, k: usize) -> Vec<SyntheticRecord> {
    let words: HashSet<String> = word_tokens(subject).collect();
    let matching: Vec<SyntheticRecord> = corpus
        .iter()
        .filter(|r| {
            r.keywords
                .iter()
                .any(|kw| word_tokens(kw).any(|w| words.contains(&w)))
        })
        .take(k)
        .cloned()
        .collect();
    if matching.is_empty() {
        corpus.iter().take(k).cloned().collect()
    } else {
        matching
    }
}

// ---------------------------------------------------------------------------
// Suite
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteQuery {
    pub id: String,
    pub intent: Intent,
    pub text: String,
}

pub fn parse_suite(json: &str) -> Result<Vec<SuiteQuery>, BenchError> {
    let suite: Vec<SuiteQuery> = serde_json::from_str(json)?;
    validate_suite(&suite)?;
    Ok(suite)
}

pub fn load_suite(path: impl AsRef<Path>) -> Result<Vec<SuiteQuery>, BenchError> {
    parse_suite(&std::fs::read_to_string(path)?)
}

pub fn default_suite() -> Vec<SuiteQuery> {
    parse_suite(DEFAULT_SUITE_JSON).expect("bundled suite is valid")
}

/// Requires unique ids, valid question text and five questions per intent.
pub fn validate_suite(suite: &[SuiteQuery]) -> Result<(), BenchError> {
    let mut seen = HashSet::new();
    for q in suite {
        if !seen.insert(q.id.as_str()) {
            return Err(BenchError::BadEntry {
                id: q.id.clone(),
                reason: "duplicate id".into(),
            });
        }
        UserQuery::new(&q.text).map_err(|e| BenchError::BadEntry {
            id: q.id.clone(),
            reason: e.to_string(),
        })?;
    }
    for intent in Intent::ALL {
        let found = suite.iter().filter(|q| q.intent == intent).count();
        if found != 5 {
            return Err(BenchError::Shape {
                intent: intent.as_str(),
                found,
            });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Benchmark
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRun {
    pub query_id: String,
    pub query: String,
    pub intent: Intent,
    pub run_index: u32,
    pub ledger: RunLedger,
    pub ledger_total: u64,
    pub status: RunStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failure_reason: Option<FailureReason>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub query: String,
    pub intent: Intent,
    /// Mean ledger total over the query's completed runs.
    pub res_mean: Option<f64>,
    /// Input plus output tokens of the naive baseline for this query.
    pub naive_tokens: Option<u64>,
    pub completed: u32,
    pub failed: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LayerMeans {
    pub reasoner: f64,
    pub executor: f64,
    pub synthesizer: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub runs: Vec<BenchRun>,
    pub runs_per_query: u32,
    pub completed_count: usize,
    pub failed_count: usize,
    pub res_mean: f64,
    pub res_stddev: f64,
    pub naive_mean: f64,
    pub naive_failed_count: usize,
    pub savings_fraction: f64,
    /// Set when the pipeline cost more than the naive baseline.
    pub savings_flagged: bool,
    /// Queries whose runs all failed.
    pub flagged_queries: Vec<String>,
    pub per_query: Vec<QueryResult>,
    pub layer_means: LayerMeans,
    /// Naive cost model calibrated from this report's naive mean.
    pub naive_model: Option<NaiveCostModel>,
}

impl BenchmarkReport {
    pub fn completed_totals(&self) -> Vec<u64> {
        self.runs
            .iter()
            .filter(|r| r.status == RunStatus::Completed)
            .map(|r| r.ledger_total)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub runs_per_query: u32,
    pub pipeline: Pipeline,
    pub naive_records: usize,
    /// Worker threads; queries are spread across them.
    pub threads: usize,
    /// Incremented after every pipeline run.
    pub progress: Option<Arc<AtomicUsize>>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            runs_per_query: 5,
            pipeline: Pipeline::default(),
            naive_records: NAIVE_RECORDS_PER_PROMPT,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()).min(8),
            progress: None,
        }
    }
}

struct QueryOutcome {
    runs: Vec<BenchRun>,
    naive: Option<u64>,
}

fn run_one_query(
    q: &SuiteQuery,
    config: &BenchConfig,
    source: &dyn DataSource,
    provider: &dyn LlmProvider,
    naive_corpus: &[SyntheticRecord],
) -> QueryOutcome {
    let Ok(query) = UserQuery::new(&q.text) else {
        unreachable!("suite entries are validated")
    };
    let mut runs = Vec::new();
    let mut first_subject = None;
    for run_index in 0..config.runs_per_query {
        let record = config.pipeline.run(&query, source, provider);
        if first_subject.is_none() {
            first_subject = record.plan.as_ref().map(|p| p.subjects[0].clone());
        }
        runs.push(BenchRun {
            query_id: q.id.clone(),
            query: q.text.clone(),
            intent: q.intent,
            run_index,
            ledger_total: ledger_total(&record.ledger),
            ledger: record.ledger,
            status: record.status,
            failure_reason: record.failure_reason,
        });
        if let Some(p) = &config.progress {
            p.fetch_add(1, Ordering::Relaxed);
        }
    }
    let subject = first_subject.unwrap_or_else(|| q.text.clone());
    let records = naive_records_for(naive_corpus, &subject, config.naive_records);
    let naive = if records.is_empty() {
        None
    } else {
        run_naive_baseline(&query, &records, provider)
            .ok()
            .map(|u| u.total())
    };
    QueryOutcome { runs, naive }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Runs every suite question `runs_per_query` times plus one naive baseline per question.
///
/// Statistics cover completed runs only; failures are counted separately and a question
/// whose runs all failed is flagged rather than aborting the suite.
pub fn run_benchmark(
    suite: &[SuiteQuery],
    config: &BenchConfig,
    source: &dyn DataSource,
    provider: &dyn LlmProvider,
    naive_corpus: &[SyntheticRecord],
) -> Result<BenchmarkReport, BenchError> {
    validate_suite(suite)?;
    let threads = config.threads.max(1);
    let mut outcomes: Vec<(usize, QueryOutcome)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    suite
                        .iter()
                        .enumerate()
                        .skip(t)
                        .step_by(threads)
                        .map(|(i, q)| (i, run_one_query(q, config, source, provider, naive_corpus)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    outcomes.sort_by(|a, b| suite[a.0].id.cmp(&suite[b.0].id));

    let mut runs = Vec::new();
    let mut per_query = Vec::new();
    let mut flagged_queries = Vec::new();
    for (i, outcome) in outcomes {
        let q = &suite[i];
        let done: Vec<f64> = outcome
            .runs
            .iter()
            .filter(|r| r.status == RunStatus::Completed)
            .map(|r| r.ledger_total as f64)
            .collect();
        if done.is_empty() {
            flagged_queries.push(q.id.clone());
        }
        per_query.push(QueryResult {
            query_id: q.id.clone(),
            query: q.text.clone(),
            intent: q.intent,
            res_mean: (!done.is_empty()).then(|| mean(&done)),
            naive_tokens: outcome.naive,
            completed: done.len() as u32,
            failed: outcome.runs.len() as u32 - done.len() as u32,
        });
        runs.extend(outcome.runs);
    }

    let completed: Vec<&BenchRun> = runs
        .iter()
        .filter(|r| r.status == RunStatus::Completed)
        .collect();
    let totals: Vec<u64> = completed.iter().map(|r| r.ledger_total).collect();
    let (res_mean, res_stddev) = summary_stats(&totals)
        .map(|s| (s.mean, s.stddev))
        .unwrap_or((0.0, 0.0));
    let naive: Vec<f64> = per_query
        .iter()
        .filter_map(|q| q.naive_tokens.map(|t| t as f64))
        .collect();
    let naive_mean = mean(&naive);
    let savings_fraction = compute_savings(res_mean, naive_mean);
    let layer = |f: fn(&RunLedger) -> TokenUsage| {
        mean(&completed.iter().map(|r| f(&r.ledger).total() as f64).collect::<Vec<_>>())
    };

    Ok(BenchmarkReport {
        runs_per_query: config.runs_per_query,
        completed_count: completed.len(),
        failed_count: runs.len() - completed.len(),
        layer_means: LayerMeans {
            reasoner: layer(|l| l.reasoner),
            executor: layer(|l| l.executor),
            synthesizer: layer(|l| l.synthesizer),
        },
        runs,
        res_mean,
        res_stddev,
        naive_mean,
        naive_failed_count: per_query.len() - naive.len(),
        savings_fraction,
        savings_flagged: savings_fraction < 0.0,
        flagged_queries,
        per_query,
        naive_model: NaiveCostModel::calibrate(
            naive_mean,
            config.naive_records,
            REFERENCE_PROMPT_OVERHEAD,
        ),
    })
}

// ---------------------------------------------------------------------------
// Invariance
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceEntry {
    pub n: usize,
    pub res_tokens: u64,
    pub stddev: f64,
    pub executor_requests: u64,
    pub records_scanned: u64,
    pub naive_model_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub query: String,
    pub seed: u64,
    pub entries: Vec<InvarianceEntry>,
    pub flatness_ratio: f64,
    pub naive_model: NaiveCostModel,
}

impl InvarianceReport {
    pub fn is_flat(&self) -> bool {
        self.flatness_ratio <= FLATNESS_TOLERANCE
    }

    /// Ratio of the naive model column at the largest and smallest size.
    pub fn naive_growth(&self) -> f64 {
        match (self.entries.first(), self.entries.last()) {
            (Some(a), Some(b)) if a.naive_model_tokens > 0.0 => {
                b.naive_model_tokens / a.naive_model_tokens
            }
            _ => 1.0,
        }
    }
}

/// Checks the default pipeline against growing synthetic sources.
pub fn verify_invariance(sizes: &[usize], query: &str, seed: u64) -> Result<InvarianceReport, BenchError> {
    verify_invariance_with(Pipeline::default(), sizes, query, seed)
}

/// Runs `pipeline` with the mock provider once per size on a fresh synthetic source
/// generated from `seed`, recording ledger totals and executor work.
pub fn verify_invariance_with(
    pipeline: Pipeline,
    sizes: &[usize],
    query: &str,
    seed: u64,
) -> Result<InvarianceReport, BenchError> {
    if sizes.is_empty() || sizes[0] == 0 || sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(BenchError::BadSizes);
    }
    let user_query = UserQuery::new(query).map_err(|e| BenchError::Query(e.to_string()))?;
    let provider = MockProvider::new();
    let model = NaiveCostModel::reference();
    let mut entries = Vec::with_capacity(sizes.len());
    for &n in sizes {
        let source = SyntheticSource::generate(seed, n);
        let record = pipeline.run(&user_query, &source, &provider);
        if let Some(detail) = record.failure_detail {
            return Err(BenchError::Query(detail));
        }
        let stats = source.stats();
        entries.push(InvarianceEntry {
            n,
            res_tokens: ledger_total(&record.ledger),
            stddev: 0.0,
            executor_requests: stats.requests,
            records_scanned: stats.records_scanned,
            naive_model_tokens: naive_cost(n as u64, &model),
        });
    }
    let max = entries.iter().map(|e| e.res_tokens).max().unwrap_or(0);
    let min = entries.iter().map(|e| e.res_tokens).min().unwrap_or(0);
    let flatness_ratio = if min == 0 { f64::INFINITY } else { max as f64 / min as f64 };
    Ok(InvarianceReport {
        query: query.to_string(),
        seed,
        entries,
        flatness_ratio,
        naive_model: model,
    })
}

// ---------------------------------------------------------------------------
// Figure data
// ---------------------------------------------------------------------------

pub const FIGURE_FILES: [&str; 5] = [
    "fig2_invariance.csv",
    "fig3_scaling.csv",
    "fig4_per_query.csv",
    "fig5_histogram.csv",
    "fig6_layers.csv",
];

/// Writes the five figure CSVs into `dir`, headers included even without data.
///
/// | file | columns |
/// |---|---|
/// | `fig2_invariance.csv` | `n,res_tokens,stddev` |
/// | `fig3_scaling.csv` | `n,res_tokens,naive_model_tokens`, plus a projected row at [`FULL_SCALE_N`] using the largest measured total |
/// | `fig4_per_query.csv` | `query,res,naive` |
/// | `fig5_histogram.csv` | `ledger_total`, one row per completed run |
/// | `fig6_layers.csv` | `layer,mean_tokens` |
pub fn export_figure_data(
    dir: impl AsRef<Path>,
    bench: Option<&BenchmarkReport>,
    invariance: Option<&InvarianceReport>,
) -> Result<Vec<PathBuf>, BenchError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths: Vec<PathBuf> = FIGURE_FILES.iter().map(|f| dir.join(f)).collect();
    let entries = invariance.map_or(&[][..], |r| &r.entries[..]);

    let mut w = csv::Writer::from_path(&paths[0])?;
    w.write_record(["n", "res_tokens", "stddev"])?;
    for e in entries {
        w.serialize((e.n, e.res_tokens, e.stddev))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[1])?;
    w.write_record(["n", "res_tokens", "naive_model_tokens"])?;
    for e in entries {
        w.serialize((e.n as u64, e.res_tokens, e.naive_model_tokens))?;
    }
    if let Some(r) = invariance.filter(|r| !r.entries.is_empty()) {
        let largest = r.entries.iter().map(|e| e.res_tokens).max().unwrap_or(0);
        w.serialize((FULL_SCALE_N, largest, naive_cost(FULL_SCALE_N, &r.naive_model)))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[2])?;
    w.write_record(["query", "res", "naive"])?;
    for q in bench.map_or(&[][..], |b| &b.per_query[..]) {
        w.serialize((&q.query_id, q.res_mean, q.naive_tokens))?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[3])?;
    w.write_record(["ledger_total"])?;
    for total in bench.map(|b| b.completed_totals()).unwrap_or_default() {
        w.serialize([total])?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(&paths[4])?;
    w.write_record(["layer", "mean_tokens"])?;
    if let Some(b) = bench.filter(|b| b.completed_count > 0) {
        let m = b.layer_means;
        for (layer, v) in [
            ("reasoner", m.reasoner),
            ("executor", m.executor),
            ("synthesizer", m.synthesizer),
        ] {
            w.serialize((layer, v))?;
        }
    }
    w.flush()?;

    Ok(paths)
}

/// Group-by of benchmark ledger totals per intent, useful for quick inspection.
pub fn totals_by_intent(report: &BenchmarkReport) -> BTreeMap<&'static str, Vec<u64>> {
    let mut out: BTreeMap<&'static str, Vec<u64>> = BTreeMap::new();
    for r in report.runs.iter().filter(|r| r.status == RunStatus::Completed) {
        out.entry(r.intent.as_str()).or_default().push(r.ledger_total);
    }
    out
}
