//! Language-model completion with token accounting.
//!
//! [`MockProvider`] answers from fixtures (or deterministic per-call-site defaults) and
//! estimates usage locally. [`LiveProvider`] calls an Anthropic-style messages API and
//! records the usage the provider reports.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datasources::http::{
    Backoff, HttpRequest, HttpTransport, Method, RateLimiter, ReqwestTransport, TransportError,
};
use crate::error::ProviderError;
use crate::tokens::estimate_tokens;
use crate::types::{StatisticalSummary, TokenUsage, UsageSource, UserQuery};

/// Which layer is calling the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallSite {
    Reasoner,
    Synthesizer,
    NaiveBaseline,
}

/// A prompt: the fixed system block for its call site plus per-call user content.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSpec {
    pub call_site: CallSite,
    pub system_prompt: &'static str,
    pub user_content: String,
}

impl PromptSpec {
    /// Estimated input size, counted as system and user blocks separately.
    pub fn estimated_input_tokens(&self) -> u64 {
        estimate_tokens(self.system_prompt) + estimate_tokens(&self.user_content)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProviderResponse {
    pub text: String,
    pub usage: TokenUsage,
    pub usage_source: UsageSource,
    pub provider_name: String,
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &PromptSpec) -> Result<ProviderResponse, ProviderError>;
    /// Whether token usage comes from the provider rather than the local estimator.
    fn reports_usage(&self) -> bool {
        false
    }
}

impl<T: LlmProvider + ?Sized> LlmProvider for Arc<T> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn complete(&self, prompt: &PromptSpec) -> Result<ProviderResponse, ProviderError> {
        (**self).complete(prompt)
    }
    fn reports_usage(&self) -> bool {
        (**self).reports_usage()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Live,
}

pub const DEFAULT_MODEL_ID: &str = "claude-sonnet-4-20250514";
pub const DEFAULT_ENDPOINT: &str = "https://api.anthropic.com/v1/messages";
pub const DEFAULT_API_KEY_VAR: &str = "ANTHROPIC_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub model_id: String,
    pub endpoint: String,
    pub api_key_ref: String,
    pub timeout_ms: u64,
    pub max_retries: u32,
    pub max_in_flight: usize,
    pub max_output_tokens: u32,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            kind: ProviderKind::Mock,
            model_id: DEFAULT_MODEL_ID.into(),
            endpoint: DEFAULT_ENDPOINT.into(),
            api_key_ref: DEFAULT_API_KEY_VAR.into(),
            timeout_ms: 60_000,
            max_retries: 3,
            max_in_flight: 4,
            max_output_tokens: 1024,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.kind == ProviderKind::Live
            && (self.model_id.trim().is_empty()
                || self.endpoint.trim().is_empty()
                || self.api_key_ref.trim().is_empty())
        {
            return Err(ProviderError::Config(
                "live provider needs model_id, endpoint and api_key_ref".into(),
            ));
        }
        Ok(())
    }

    /// The API key, read from the environment variable named by `api_key_ref`.
    pub fn api_key(&self) -> Result<String, ProviderError> {
        std::env::var(&self.api_key_ref)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| {
                ProviderError::Config(format!("environment variable {} is not set", self.api_key_ref))
            })
    }
}

// ---------------------------------------------------------------------------
// Mock
// ---------------------------------------------------------------------------

/// How a fixture recognises a prompt. Patterns prefixed with `re:` are regexes.
#[derive(Debug, Clone)]
pub enum PromptMatcher {
    Substring(String),
    Regex(Regex),
}

impl PromptMatcher {
    pub fn parse(pattern: &str) -> Result<Self, regex::Error> {
        match pattern.strip_prefix("re:") {
            Some(re) => Ok(PromptMatcher::Regex(Regex::new(re)?)),
            None => Ok(PromptMatcher::Substring(pattern.to_string())),
        }
    }

    pub fn matches(&self, text: &str) -> bool {
        match self {
            PromptMatcher::Substring(s) => text.contains(s.as_str()),
            PromptMatcher::Regex(r) => r.is_match(text),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub matcher: PromptMatcher,
    pub response: String,
}

#[derive(Deserialize)]
struct FixtureEntry {
    #[serde(rename = "match")]
    pattern: String,
    response: String,
}

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error("reading fixture file: {0}")]
    Io(#[from] std::io::Error),
    #[error("fixture JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("fixture pattern: {0}")]
    Regex(#[from] regex::Error),
}

/// Parses a fixture list: `[{"match": "...", "response": "..."}, ...]`.
pub fn parse_fixtures(json: &str) -> Result<Vec<Fixture>, FixtureError> {
    let entries: Vec<FixtureEntry> = serde_json::from_str(json)?;
    entries
        .into_iter()
        .map(|e| {
            Ok(Fixture {
                matcher: PromptMatcher::parse(&e.pattern)?,
                response: e.response,
            })
        })
        .collect()
}

pub const NAIVE_MOCK_ANSWER: &str =
    "Based on the records provided, the topic appears in several venues across recent years.";
const EMPTY_SYNTHESIS: &str = "No statistics were provided.";

/// Deterministic offline provider.
///
/// The first fixture whose pattern matches the user content wins. Without a match the
/// reasoner call site gets the grammar's plan for the embedded question, the
/// synthesizer call site gets the template narrative for the embedded summary, and the
/// naive baseline gets a fixed short answer. Usage is always estimated.
#[derive(Debug, Clone, Default)]
pub struct MockProvider {
    fixtures: Vec<Fixture>,
    failures: Vec<PromptMatcher>,
}

impl MockProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fixtures(fixtures: Vec<Fixture>) -> Self {
        Self {
            fixtures,
            failures: Vec::new(),
        }
    }

    pub fn from_fixture_file(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let text = std::fs::read_to_string(path)?;
        Ok(Self::with_fixtures(parse_fixtures(&text)?))
    }

    pub fn push_fixture(&mut self, pattern: &str, response: impl Into<String>) {
        self.fixtures.push(Fixture {
            matcher: PromptMatcher::parse(pattern).expect("valid fixture pattern"),
            response: response.into(),
        });
    }

    /// Makes every prompt matching `pattern` fail with a timeout.
    pub fn fail_on(mut self, pattern: &str) -> Self {
        self.failures
            .push(PromptMatcher::parse(pattern).expect("valid failure pattern"));
        self
    }

    fn default_response(prompt: &PromptSpec) -> String {
        match prompt.call_site {
            CallSite::Reasoner => {
                let plan = crate::reasoner::extract_question(&prompt.user_content)
                    .and_then(|q| UserQuery::new(q).ok())
                    .map(|q| crate::reasoner::rule_based_parse(&q));
                match plan {
                    Some(Ok(plan)) => crate::reasoner::plan_to_json(&plan),
                    Some(Err(e)) => json!({ "error": e.to_string() }).to_string(),
                    None => json!({ "error": "no question found" }).to_string(),
                }
            }
            CallSite::Synthesizer => {
                match serde_json::from_str::<StatisticalSummary>(&prompt.user_content) {
                    Ok(summary) => crate::synthesizer::template_narrative(&summary).text,
                    Err(_) => EMPTY_SYNTHESIS.to_string(),
                }
            }
            CallSite::NaiveBaseline => NAIVE_MOCK_ANSWER.to_string(),
        }
    }
}

impl LlmProvider for MockProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &PromptSpec) -> Result<ProviderResponse, ProviderError> {
        if self.failures.iter().any(|m| m.matches(&prompt.user_content)) {
            return Err(ProviderError::Timeout { attempts: 1 });
        }
        let text = self
            .fixtures
            .iter()
            .find(|f| f.matcher.matches(&prompt.user_content))
            .map(|f| f.response.clone())
            .unwrap_or_else(|| Self::default_response(prompt));
        Ok(ProviderResponse {
            usage: TokenUsage::new(prompt.estimated_input_tokens(), estimate_tokens(&text)),
            usage_source: UsageSource::Estimated,
            provider_name: self.name().to_string(),
            text,
        })
    }
}

// ---------------------------------------------------------------------------
// Live
// ---------------------------------------------------------------------------

/// Messages-API adapter.
///
/// Request: `POST endpoint` with headers `x-api-key`, `anthropic-version: 2023-06-01`
/// and body `{"model", "max_tokens", "system", "messages": [{"role": "user", "content"}]}`.
/// Response: text is the concatenation of `content[*].text`; usage is
/// `usage.input_tokens` / `usage.output_tokens`. Timeouts, connection failures, 429,
/// 5xx and 529 are retried with exponential backoff.
pub struct LiveProvider {
    config: ProviderConfig,
    api_key: String,
    transport: Arc<dyn HttpTransport>,
    limiter: RateLimiter,
    backoff: Backoff,
}

#[derive(Deserialize)]
struct MessagesResponse {
    #[serde(default)]
    content: Vec<ContentBlock>,
    usage: Option<ReportedUsage>,
}

#[derive(Deserialize)]
struct ContentBlock {
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
struct ReportedUsage {
    input_tokens: u64,
    output_tokens: u64,
}

impl LiveProvider {
    pub fn new(config: ProviderConfig) -> Result<Self, ProviderError> {
        let transport = ReqwestTransport::new(concat!("res-agent/", env!("CARGO_PKG_VERSION")))
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        Self::with_transport(config, Arc::new(transport))
    }

    pub fn with_transport(
        config: ProviderConfig,
        transport: Arc<dyn HttpTransport>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        let api_key = config.api_key()?;
        Ok(Self {
            limiter: RateLimiter::new(config.max_in_flight, Duration::ZERO),
            backoff: Backoff {
                max_retries: config.max_retries,
                ..Backoff::default()
            },
            api_key,
            config,
            transport,
        })
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    fn request_for(&self, prompt: &PromptSpec) -> HttpRequest {
        let body = json!({
            "model": self.config.model_id,
            "max_tokens": self.config.max_output_tokens,
            "system": prompt.system_prompt,
            "messages": [{ "role": "user", "content": prompt.user_content }],
        });
        HttpRequest {
            method: Method::Post {
                body: body.to_string(),
            },
            url: self.config.endpoint.clone(),
            headers: vec![
                ("x-api-key".into(), self.api_key.clone()),
                ("anthropic-version".into(), "2023-06-01".into()),
            ],
            timeout: Duration::from_millis(self.config.timeout_ms),
        }
    }
}

impl LlmProvider for LiveProvider {
    fn name(&self) -> &str {
        &self.config.model_id
    }

    fn reports_usage(&self) -> bool {
        true
    }

    fn complete(&self, prompt: &PromptSpec) -> Result<ProviderResponse, ProviderError> {
        let request = self.request_for(prompt);
        let mut retry = 0u32;
        let body = loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.transport.send(&request)
            };
            let retryable = match &outcome {
                Ok(r) if r.is_success() => false,
                Ok(r) => r.status == 429 || r.status == 529 || r.status >= 500,
                Err(TransportError::Timeout | TransportError::Connect(_)) => true,
                Err(TransportError::Other(_)) => false,
            };
            if !retryable || retry >= self.backoff.max_retries {
                match outcome {
                    Ok(r) if r.is_success() => break r.body,
                    Ok(r) => {
                        return Err(ProviderError::Status {
                            status: r.status,
                            body: r.body.chars().take(200).collect(),
                        })
                    }
                    Err(TransportError::Timeout) => {
                        return Err(ProviderError::Timeout { attempts: retry + 1 })
                    }
                    Err(e) => return Err(ProviderError::Transport(e.to_string())),
                }
            }
            let wait = match &outcome {
                Ok(r) => r.retry_after.unwrap_or_else(|| self.backoff.delay(retry)),
                Err(_) => self.backoff.delay(retry),
            };
            std::thread::sleep(wait);
            retry += 1;
        };

        let parsed: MessagesResponse = serde_json::from_str(&body)
            .map_err(|e| ProviderError::BadResponse(e.to_string()))?;
        let text: String = parsed.content.into_iter().filter_map(|b| b.text).collect();
        if text.trim().is_empty() {
            return Err(ProviderError::BadResponse("empty completion".into()));
        }
        let (usage, usage_source) = match parsed.usage {
            Some(u) => (
                TokenUsage::new(u.input_tokens, u.output_tokens),
                UsageSource::ProviderReported,
            ),
            None => (
                TokenUsage::new(prompt.estimated_input_tokens(), estimate_tokens(&text)),
                UsageSource::Estimated,
            ),
        };
        Ok(ProviderResponse {
            text,
            usage,
            usage_source,
            provider_name: self.config.model_id.clone(),
        })
    }
}

/// Builds the provider named by `config`.
pub fn provider_from_config(config: &ProviderConfig) -> Result<Arc<dyn LlmProvider>, ProviderError> {
    config.validate()?;
    match config.kind {
        ProviderKind::Mock => Ok(Arc::new(MockProvider::new())),
        ProviderKind::Live => Ok(Arc::new(LiveProvider::new(config.clone())?)),
    }
}
