//! Count-only client for the Crossref `works` endpoint.
//!
//! Every request carries `rows=0`, so responses hold `total-results` and facets but no
//! items. Requests go through a limiter (2 in flight, 100 ms apart by default), honour
//! `Retry-After` on 429/503, and are cached in memory by URL.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::Deserialize;

use super::http::{Backoff, HttpRequest, HttpTransport, RateLimiter, ReqwestTransport, TransportError};
use super::{check_limit, check_subject, check_year_span, rank_buckets, DataSource, FacetBucket, SourceStats};
use crate::error::SourceError;
use crate::types::{RankDimension, YearRange};

pub const CROSSREF_WORKS_URL: &str = "https://api.crossref.org/works";
pub const CROSSREF_SOURCE_NAME: &str = "crossref";
pub const DEFAULT_MAILTO: &str = "res-agent@example.org";
const YEAR_FACET_FIELD: &str = "published";

/// Crossref facet field for a ranking dimension.
pub fn facet_field(dimension: RankDimension) -> &'static str {
    match dimension {
        RankDimension::Venue => "container-title",
        RankDimension::Publisher => "publisher-name",
        RankDimension::WorkType => "type-name",
    }
}

/// Parameters of one count-only works query. `rows` is always zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorksRequest {
    pub subject: Option<String>,
    pub range: Option<YearRange>,
    pub facet: Option<(String, u32)>,
}

impl WorksRequest {
    pub fn subject(subject: impl Into<String>) -> Self {
        Self {
            subject: Some(subject.into()),
            ..Self::default()
        }
    }

    pub fn with_range(mut self, range: YearRange) -> Self {
        self.range = Some(range);
        self
    }

    pub fn with_facet(mut self, field: impl Into<String>, limit: u32) -> Self {
        self.facet = Some((field.into(), limit));
        self
    }
}

fn form_encode(s: &str) -> String {
    url::form_urlencoded::byte_serialize(s.as_bytes()).collect()
}

/// Builds the request URL. Parameter order is fixed:
/// `query.bibliographic`, `rows`, `filter`, `facet`, `mailto`.
pub fn build_works_request(params: &WorksRequest, mailto: &str) -> String {
    build_works_request_at(CROSSREF_WORKS_URL, params, mailto)
}

pub fn build_works_request_at(base: &str, params: &WorksRequest, mailto: &str) -> String {
    let mut query = Vec::with_capacity(5);
    if let Some(subject) = &params.subject {
        query.push(format!("query.bibliographic={}", form_encode(subject)));
    }
    query.push("rows=0".to_string());
    if let Some(r) = params.range {
        query.push(format!(
            "filter=from-pub-date:{:04}-01-01,until-pub-date:{:04}-12-31",
            r.from_year, r.until_year
        ));
    }
    if let Some((field, limit)) = &params.facet {
        query.push(format!("facet={}:{}", form_encode(field), limit));
    }
    query.push(format!("mailto={}", form_encode(mailto).replace("%40", "@")));
    format!("{base}?{}", query.join("&"))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorksSummary {
    pub total: u64,
    pub facets: BTreeMap<String, Vec<FacetBucket>>,
}

#[derive(Deserialize)]
struct Envelope {
    message: Message,
}

// `items` is deliberately absent so record-level content is never deserialized.
#[derive(Deserialize)]
struct Message {
    #[serde(rename = "total-results")]
    total_results: Option<u64>,
    #[serde(default)]
    facets: BTreeMap<String, Facet>,
}

#[derive(Deserialize)]
struct Facet {
    #[serde(default)]
    values: BTreeMap<String, u64>,
}

/// Reads `message.total-results` and `message.facets.*.values`.
pub fn parse_works_response(body: &str) -> Result<WorksSummary, SourceError> {
    let env: Envelope = serde_json::from_str(body)
        .map_err(|e| SourceError::BadResponse(format!("works envelope: {e}")))?;
    let total = env
        .message
        .total_results
        .ok_or_else(|| SourceError::BadResponse("missing total-results".into()))?;
    let facets = env
        .message
        .facets
        .into_iter()
        .map(|(field, f)| {
            let n = f.values.len();
            let buckets = f
                .values
                .into_iter()
                .map(|(label, count)| FacetBucket { label, count })
                .collect();
            (field, rank_buckets(buckets, n))
        })
        .collect();
    Ok(WorksSummary { total, facets })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum YearlyStrategy {
    /// One `rows=0` request per year.
    #[default]
    PerYear,
    /// One request with a `published` year facet.
    YearFacet,
}

#[derive(Debug, Clone)]
pub struct CrossrefConfig {
    pub base_url: String,
    pub mailto: String,
    pub timeout: Duration,
    pub max_in_flight: usize,
    pub min_spacing: Duration,
    pub backoff: Backoff,
    pub cache_ttl: Duration,
    pub yearly_strategy: YearlyStrategy,
}

impl Default for CrossrefConfig {
    fn default() -> Self {
        Self {
            base_url: CROSSREF_WORKS_URL.to_string(),
            mailto: DEFAULT_MAILTO.to_string(),
            timeout: Duration::from_secs(30),
            max_in_flight: 2,
            min_spacing: Duration::from_millis(100),
            backoff: Backoff::default(),
            cache_ttl: Duration::from_secs(3600),
            yearly_strategy: YearlyStrategy::PerYear,
        }
    }
}

pub struct CrossrefSource {
    config: CrossrefConfig,
    transport: Arc<dyn HttpTransport>,
    limiter: RateLimiter,
    cache: Mutex<HashMap<String, (Instant, String)>>,
    size_estimate: OnceLock<u64>,
    requests: AtomicU64,
}

impl CrossrefSource {
    pub fn new(config: CrossrefConfig, transport: Arc<dyn HttpTransport>) -> Self {
        let limiter = RateLimiter::new(config.max_in_flight, config.min_spacing);
        Self {
            config,
            transport,
            limiter,
            cache: Mutex::new(HashMap::new()),
            size_estimate: OnceLock::new(),
            requests: AtomicU64::new(0),
        }
    }

    /// Live client over HTTPS.
    pub fn live(config: CrossrefConfig) -> Result<Self, SourceError> {
        let ua = format!("res-agent/{} (mailto:{})", env!("CARGO_PKG_VERSION"), config.mailto);
        let transport = ReqwestTransport::new(&ua).map_err(|e| SourceError::Transport(e.to_string()))?;
        Ok(Self::new(config, Arc::new(transport)))
    }

    pub fn config(&self) -> &CrossrefConfig {
        &self.config
    }

    pub fn url_for(&self, params: &WorksRequest) -> String {
        build_works_request_at(&self.config.base_url, params, &self.config.mailto)
    }

    fn cached(&self, url: &str) -> Option<String> {
        let cache = self.cache.lock();
        cache
            .get(url)
            .filter(|(at, _)| at.elapsed() < self.config.cache_ttl)
            .map(|(_, body)| body.clone())
    }

    fn fetch(&self, params: &WorksRequest) -> Result<WorksSummary, SourceError> {
        let url = self.url_for(params);
        if !url.contains("rows=0") {
            return Err(SourceError::Precondition("works requests must be count-only".into()));
        }
        if let Some(body) = self.cached(&url) {
            return parse_works_response(&body);
        }

        let request = HttpRequest::get(url.clone(), self.config.timeout);
        let backoff = self.config.backoff;
        let mut retry = 0u32;
        let body = loop {
            let outcome = {
                let _permit = self.limiter.acquire();
                self.requests.fetch_add(1, Ordering::Relaxed);
                self.transport.send(&request)
            };
            let wait = match outcome {
                Ok(resp) if resp.is_success() => break resp.body,
                Ok(resp) if resp.status == 429 || resp.status == 503 => {
                    if retry >= backoff.max_retries {
                        return Err(SourceError::RateLimited { attempts: retry + 1 });
                    }
                    resp.retry_after.unwrap_or_else(|| backoff.delay(retry))
                }
                Ok(resp) if resp.status >= 500 && retry < backoff.max_retries => backoff.delay(retry),
                Ok(resp) => {
                    return Err(SourceError::Status {
                        status: resp.status,
                        url,
                    })
                }
                Err(TransportError::Other(e)) => return Err(SourceError::Transport(e)),
                Err(e) if retry >= backoff.max_retries => {
                    return Err(SourceError::Transport(e.to_string()))
                }
                Err(_) => backoff.delay(retry),
            };
            tracing::debug!(%url, retry, ?wait, "retrying crossref request");
            std::thread::sleep(wait);
            retry += 1;
        };

        let parsed = parse_works_response(&body)?;
        self.cache.lock().insert(url, (Instant::now(), body));
        Ok(parsed)
    }

    fn yearly_by_facet(
        &self,
        subject: &str,
        range: YearRange,
    ) -> Result<Vec<(i32, u64)>, SourceError> {
        let params = WorksRequest::subject(subject)
            .with_range(range)
            .with_facet(YEAR_FACET_FIELD, range.span());
        let summary = self.fetch(&params)?;
        let by_year: HashMap<i32, u64> = summary
            .facets
            .get(YEAR_FACET_FIELD)
            .map(|b| {
                b.iter()
                    .filter_map(|b| b.label.trim().parse::<i32>().ok().map(|y| (y, b.count)))
                    .collect()
            })
            .unwrap_or_default();
        Ok(range
            .years()
            .map(|y| (y, by_year.get(&y).copied().unwrap_or(0)))
            .collect())
    }
}

impl DataSource for CrossrefSource {
    fn source_name(&self) -> &str {
        CROSSREF_SOURCE_NAME
    }

    fn count_total(&self, subject: &str, range: Option<YearRange>) -> Result<u64, SourceError> {
        check_subject(subject)?;
        let mut params = WorksRequest::subject(subject);
        params.range = range;
        Ok(self.fetch(&params)?.total)
    }

    fn yearly_counts(
        &self,
        subject: &str,
        from_year: i32,
        until_year: i32,
    ) -> Result<Vec<(i32, u64)>, SourceError> {
        check_subject(subject)?;
        check_year_span(from_year, until_year)?;
        let range = YearRange::new(from_year, until_year);
        match self.config.yearly_strategy {
            YearlyStrategy::YearFacet => self.yearly_by_facet(subject, range),
            YearlyStrategy::PerYear => range
                .years()
                .map(|y| Ok((y, self.count_total(subject, Some(YearRange::new(y, y)))?)))
                .collect(),
        }
    }

    fn facet_counts(
        &self,
        subject: &str,
        dimension: RankDimension,
        limit: usize,
    ) -> Result<Vec<FacetBucket>, SourceError> {
        check_subject(subject)?;
        check_limit(limit)?;
        let field = facet_field(dimension);
        let summary = self.fetch(&WorksRequest::subject(subject).with_facet(field, limit as u32))?;
        let buckets = summary.facets.get(field).cloned().unwrap_or_default();
        Ok(rank_buckets(buckets, limit))
    }

    fn dataset_size_estimate(&self) -> Result<u64, SourceError> {
        if let Some(n) = self.size_estimate.get() {
            return Ok(*n);
        }
        let n = self.fetch(&WorksRequest::default())?.total;
        Ok(*self.size_estimate.get_or_init(|| n))
    }

    fn retrieved_at(&self) -> DateTime<Utc> {
        Utc::now()
    }

    fn stats(&self) -> SourceStats {
        SourceStats {
            requests: self.requests.load(Ordering::Relaxed),
            records_scanned: 0,
        }
    }
}
