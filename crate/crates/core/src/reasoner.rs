//! Layer 1: turns a question into a validated [`QueryPlan`].
//!
//! Two backends: a deterministic grammar ([`rule_based_parse`]) and a language-model
//! call ([`parse_query`]) whose JSON answer goes through [`validate_plan_json`].
//! Nothing here takes a data source.

use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use crate::error::{PlanError, ProviderError};
use crate::provider::{CallSite, LlmProvider, PromptSpec};
use crate::types::{
    current_year, Intent, QueryPlan, RankDimension, TokenUsage, UserQuery, YearRange, MAX_SUBJECTS,
    MAX_SUBJECT_CHARS, MAX_TOP_N, MIN_YEAR,
};

pub const DEFAULT_TOP_N: u32 = 10;
/// Width of the default trend window, in full calendar years.
pub const DEFAULT_TREND_YEARS: i32 = 10;

pub const REASONER_SYSTEM_PROMPT: &str = "You are the query planner of a scholarly analytics \
assistant. Read the user's question and produce a query plan. Classify the intent as exactly \
one of: trend (how counts change over years), comparison (two or more topics side by side), \
ranking (top venues, publishers or work types for a topic) or statistics (overall counts). \
Extract 1 to 5 topic subjects as short noun phrases without filler words, and any year range \
the question mentions. Do not answer the question, do not estimate any numbers and do not \
mention data. Output only the JSON object.";

pub const PLAN_SCHEMA_INSTRUCTIONS: &str = r#"Respond with one JSON object and nothing else:
{"intent": "trend"|"comparison"|"ranking"|"statistics",
 "subjects": [string, ...],
 "time_range": {"from_year": int, "until_year": int},
 "top_n": int,
 "rank_dimension": "venue"|"publisher"|"work_type"}
time_range, top_n and rank_dimension are optional. top_n is 1..20."#;

const QUESTION_OPEN: &str = "<question>";
const QUESTION_CLOSE: &str = "</question>";

/// Prompt for the planning call: the fixed system prompt plus the question and schema.
pub fn build_reasoner_prompt(query: &UserQuery) -> PromptSpec {
    PromptSpec {
        call_site: CallSite::Reasoner,
        system_prompt: REASONER_SYSTEM_PROMPT,
        user_content: format!(
            "{QUESTION_OPEN}{}{QUESTION_CLOSE}\n{PLAN_SCHEMA_INSTRUCTIONS}",
            query.as_str()
        ),
    }
}

/// Recovers the question embedded by [`build_reasoner_prompt`].
pub fn extract_question(user_content: &str) -> Option<&str> {
    let start = user_content.find(QUESTION_OPEN)? + QUESTION_OPEN.len();
    let end = start + user_content[start..].find(QUESTION_CLOSE)?;
    Some(&user_content[start..end])
}

/// Asks `provider` for a plan, retrying once with the validation error on bad output.
pub fn parse_query(
    query: &UserQuery,
    provider: &dyn LlmProvider,
) -> Result<(QueryPlan, TokenUsage), ReasonerError> {
    let prompt = build_reasoner_prompt(query);
    let first = provider.complete(&prompt)?;
    let mut usage = first.usage;
    match validate_plan_json(&first.text) {
        Ok(plan) => Ok((plan, usage)),
        Err(err) => {
            let retry = PromptSpec {
                user_content: format!(
                    "{}\nYour previous answer was rejected: {err}. Reply with corrected JSON only.",
                    prompt.user_content
                ),
                ..prompt
            };
            let second = provider.complete(&retry)?;
            usage = usage + second.usage;
            validate_plan_json(&second.text)
                .map(|plan| (plan, usage))
                .map_err(|e| ReasonerError::Plan { error: e, usage })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ReasonerError {
    #[error(transparent)]
    Provider(#[from] ProviderError),
    /// Both attempts produced invalid plans; `usage` covers both calls.
    #[error("{error}")]
    Plan { error: PlanError, usage: TokenUsage },
}

/// Strips a Markdown code fence or surrounding prose down to the outermost JSON object.
fn json_object_slice(text: &str) -> &str {
    match (text.find('{'), text.rfind('}')) {
        (Some(a), Some(b)) if a < b => &text[a..=b],
        _ => text.trim(),
    }
}

fn as_year(v: &Value, field: &'static str) -> Result<i32, PlanError> {
    v.as_i64()
        .and_then(|y| i32::try_from(y).ok())
        .ok_or_else(|| PlanError::Malformed(format!("{field} must be an integer")))
}

pub fn validate_plan_json(text: &str) -> Result<QueryPlan, PlanError> {
    validate_plan_json_at(text, current_year())
}

/// Parses and validates plan JSON, filling defaults relative to `current_year`.
pub fn validate_plan_json_at(text: &str, current_year: i32) -> Result<QueryPlan, PlanError> {
    let value: Value = serde_json::from_str(json_object_slice(text))
        .map_err(|e| PlanError::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| PlanError::Malformed("plan must be a JSON object".into()))?;

    let intent_str = obj
        .get("intent")
        .and_then(Value::as_str)
        .ok_or(PlanError::Missing("intent"))?;
    let intent =
        Intent::parse(intent_str).ok_or_else(|| PlanError::UnknownIntent(intent_str.to_string()))?;

    let raw_subjects = obj
        .get("subjects")
        .and_then(Value::as_array)
        .ok_or(PlanError::Missing("subjects"))?;
    let mut subjects: Vec<String> = Vec::new();
    for s in raw_subjects {
        let s = s
            .as_str()
            .ok_or_else(|| PlanError::Malformed("subjects must be strings".into()))?
            .trim();
        if s.is_empty() {
            return Err(PlanError::BadSubject(String::new()));
        }
        if !subjects.iter().any(|x| x == s) {
            subjects.push(s.to_string());
        }
    }

    let time_range = match obj.get("time_range") {
        None | Some(Value::Null) => None,
        Some(v) => Some(YearRange::new(
            as_year(v.get("from_year").ok_or(PlanError::Missing("from_year"))?, "from_year")?,
            as_year(v.get("until_year").ok_or(PlanError::Missing("until_year"))?, "until_year")?,
        )),
    };
    let top_n = match obj.get("top_n") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .and_then(|n| u32::try_from(n).ok())
                .ok_or_else(|| PlanError::Malformed("top_n must be a positive integer".into()))?,
        ),
    };
    let rank_dimension = match obj.get("rank_dimension") {
        None | Some(Value::Null) => None,
        Some(v) => {
            let s = v
                .as_str()
                .ok_or_else(|| PlanError::Malformed("rank_dimension must be a string".into()))?;
            Some(RankDimension::parse(s).ok_or_else(|| PlanError::UnknownDimension(s.into()))?)
        }
    };

    let mut plan = QueryPlan {
        intent,
        subjects,
        time_range,
        top_n,
        rank_dimension,
    };
    apply_defaults(&mut plan, current_year);
    plan.validate(current_year)?;
    Ok(plan)
}

fn apply_defaults(plan: &mut QueryPlan, current_year: i32) {
    match plan.intent {
        Intent::Trend if plan.time_range.is_none() => {
            plan.time_range = Some(YearRange::new(
                current_year - DEFAULT_TREND_YEARS,
                current_year - 1,
            ));
        }
        Intent::Ranking => {
            plan.top_n.get_or_insert(DEFAULT_TOP_N);
            plan.rank_dimension.get_or_insert(RankDimension::Venue);
        }
        _ => {}
    }
}

// ---------------------------------------------------------------------------
// Rule-based grammar
// ---------------------------------------------------------------------------

macro_rules! re {
    ($name:ident, $pat:expr) => {
        static $name: LazyLock<Regex> = LazyLock::new(|| Regex::new($pat).unwrap());
    };
}

re!(COMPARISON, r"(?i)\b(?:compare|compared|comparing|comparison)\b|\svs\.?\s|\sversus\s");
re!(RANKING, r"(?i)\b(?:top|most|leading)\b");
re!(
    TREND,
    r"(?i)\b(?:trends?|trending|grow|grows|grew|grown|growing|growth|over\s+time|per\s+year|yearly|evolved?|evolving|evolution)\b"
);
re!(
    YEAR_SPAN,
    r"(?i)(?:\b(?:from|between|during|over)\s+)?\b(\d{4})\s*(?:-|–|—|to|and|until|through|till)\s*(\d{4})\b"
);
re!(YEAR_SINCE, r"(?i)\b(?:since|after|from)\s+(\d{4})\b");
re!(YEAR_SINGLE, r"(?i)(?:\b(?:in|during|for)\s+)?\b(\d{4})\b");
re!(SMALL_INT, r"\b(\d{1,2})\b");
re!(TOP_N, r"(?i)\btop\s+\d{1,2}\b");
re!(
    NOISE,
    r"(?i)\b(?:how|has|have|had|many|much|what|which|who|is|are|was|were|did|does|do|show|me|give|tell|list|compare|compared|comparing|comparison|trends?|trending|grow|grows|grew|grown|growing|growth|evolved?|evolving|evolution|over\s+time|per\s+year|yearly|annually|most|leading|top|publish|publishes|publishing|published|journals?|venues?|publishers?|conferences?|types?|statistics|stats|number|count|total|there|been)\b"
);
re!(TOPIC_PREP, r"(?i)\b(?:about|on|regarding|concerning)\b");
re!(WEAK_PREP, r"(?i)\b(?:in|for|of)\b");
re!(SPLIT, r"(?i)\s*(?:,|;|\bvs\.?|\bversus\b|\band\b|\bor\b|\bagainst\b|\bwith\b|\bto\b)\s*");

const EDGE_FILLER: &[&str] = &[
    "the", "a", "an", "of", "on", "in", "about", "for", "and", "to", "by", "with", "from",
    "research", "publications", "publication", "articles", "article", "papers", "paper",
    "studies", "works", "output", "literature", "field", "area", "topic", "regarding",
    "concerning", "between", "vs", "versus", "or", "into",
];

fn detect_dimension(lower: &str) -> RankDimension {
    static PUBLISHER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bpublishers?\b").unwrap());
    static TYPE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\btypes?\b").unwrap());
    if PUBLISHER.is_match(lower) {
        RankDimension::Publisher
    } else if TYPE.is_match(lower) {
        RankDimension::WorkType
    } else {
        RankDimension::Venue
    }
}

fn valid_year(y: i32, current_year: i32) -> bool {
    (MIN_YEAR..=current_year + 1).contains(&y)
}

/// Finds a year range in `text` and returns it with the matched phrase removed.
fn extract_years(text: &str, current_year: i32) -> (Option<YearRange>, String) {
    let parse = |s: &str| s.parse::<i32>().ok().filter(|y| valid_year(*y, current_year));
    if let Some(c) = YEAR_SPAN.captures(text) {
        if let (Some(a), Some(b)) = (parse(&c[1]), parse(&c[2])) {
            let range = YearRange::new(a.min(b), a.max(b));
            return (Some(range), YEAR_SPAN.replace(text, " ").into_owned());
        }
    }
    if let Some(c) = YEAR_SINCE.captures(text) {
        if let Some(a) = parse(&c[1]) {
            let range = YearRange::new(a, current_year.max(a));
            return (Some(range), YEAR_SINCE.replace(text, " ").into_owned());
        }
    }
    for c in YEAR_SINGLE.captures_iter(text) {
        if let Some(a) = parse(&c[1]) {
            let whole = c.get(0).unwrap();
            let rest = format!("{} {}", &text[..whole.start()], &text[whole.end()..]);
            return (Some(YearRange::new(a, a)), rest);
        }
    }
    (None, text.to_string())
}

fn strip_edges(piece: &str) -> String {
    let mut words: Vec<&str> = piece
        .split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric() && c != '+' && c != '#'))
        .filter(|w| !w.is_empty())
        .collect();
    let is_filler = |w: &str| EDGE_FILLER.iter().any(|f| f.eq_ignore_ascii_case(w));
    while words.first().is_some_and(|w| is_filler(w)) {
        words.remove(0);
    }
    while words.last().is_some_and(|w| is_filler(w)) {
        words.pop();
    }
    let mut s = words.join(" ");
    if let Some((idx, _)) = s.char_indices().nth(MAX_SUBJECT_CHARS) {
        s.truncate(idx);
        s = s.trim_end().to_string();
    }
    s
}

/// Narrows the cleaned question to the phrase after its topic preposition, if any.
fn topic_phrase(text: &str) -> &str {
    if let Some(m) = TOPIC_PREP.find_iter(text).last() {
        let rest = &text[m.end()..];
        if !strip_edges(rest).is_empty() {
            return rest;
        }
    }
    if let Some(m) = WEAK_PREP.find(text) {
        let rest = &text[m.end()..];
        if !strip_edges(rest).is_empty() {
            return rest;
        }
    }
    text
}

pub fn rule_based_parse(query: &UserQuery) -> Result<QueryPlan, PlanError> {
    rule_based_parse_at(query, current_year())
}

/// Deterministic grammar; first matching rule wins:
///
/// 1. "compare", " vs ", "versus" → comparison, subjects split on comparators, commas and "and".
/// 2. "top N", "most", "leading" → ranking; N is the first integer in 1..=20 (default 10);
///    "publisher(s)" → publisher, "type(s)" → work type, otherwise venue.
/// 3. trend vocabulary or an explicit year span → trend.
/// 4. anything else → statistics.
///
/// Subjects keep the question's casing; matching downstream is case-insensitive.
pub fn rule_based_parse_at(query: &UserQuery, current_year: i32) -> Result<QueryPlan, PlanError> {
    let text = query.as_str();
    let lower = text.to_lowercase();
    let has_span = YEAR_SPAN
        .captures(text)
        .is_some_and(|c| c[1].parse::<i32>().is_ok_and(|y| valid_year(y, current_year)));

    let intent = if COMPARISON.is_match(&format!(" {text} ")) {
        Intent::Comparison
    } else if RANKING.is_match(text) {
        Intent::Ranking
    } else if TREND.is_match(text) || has_span {
        Intent::Trend
    } else {
        Intent::Statistics
    };

    let (time_range, rest) = extract_years(text, current_year);
    let mut top_n = None;
    let mut rank_dimension = None;
    let mut rest = rest;
    if intent == Intent::Ranking {
        let n = SMALL_INT
            .captures_iter(&rest)
            .filter_map(|c| c[1].parse::<u32>().ok())
            .find(|n| (1..=MAX_TOP_N).contains(n))
            .unwrap_or(DEFAULT_TOP_N);
        top_n = Some(n);
        rank_dimension = Some(detect_dimension(&lower));
        rest = TOP_N.replace_all(&rest, " ").into_owned();
    }

    let cleaned = NOISE.replace_all(&rest, " ");
    let phrase = topic_phrase(&cleaned);
    let mut subjects: Vec<String> = Vec::new();
    let pieces: Vec<&str> = if intent == Intent::Comparison {
        SPLIT.split(phrase).collect()
    } else {
        vec![phrase]
    };
    for piece in pieces {
        let s = strip_edges(piece);
        if !s.is_empty() && !subjects.contains(&s) {
            subjects.push(s);
        }
    }
    subjects.truncate(MAX_SUBJECTS);
    if subjects.is_empty() {
        return Err(PlanError::NoSubject);
    }

    let mut plan = QueryPlan {
        intent,
        subjects,
        time_range,
        top_n,
        rank_dimension,
    };
    apply_defaults(&mut plan, current_year);
    plan.validate(current_year)?;
    Ok(plan)
}

/// Plan in the wire format the provider is asked to produce.
pub fn plan_to_json(plan: &QueryPlan) -> String {
    crate::tokens::to_canonical_json(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokens::estimate_tokens;

    const CY: i32 = 2026;

    fn parse(q: &str) -> Result<QueryPlan, PlanError> {
        rule_based_parse_at(&UserQuery::new(q).unwrap(), CY)
    }

    #[test]
    fn grammar_examples() {
        let p = parse("How has quantum computing grown from 2015 to 2024?").unwrap();
        assert_eq!(p.intent, Intent::Trend);
        assert_eq!(p.subjects, ["quantum computing"]);
        assert_eq!(p.time_range, Some(YearRange::new(2015, 2024)));

        let p = parse("Compare CRISPR vs gene therapy").unwrap();
        assert_eq!(p.intent, Intent::Comparison);
        assert_eq!(p.subjects, ["CRISPR", "gene therapy"]);
        assert_eq!(p.time_range, None);

        let p = parse("Top 10 journals publishing on graphene").unwrap();
        assert_eq!(p.intent, Intent::Ranking);
        assert_eq!(p.subjects, ["graphene"]);
        assert_eq!(p.top_n, Some(10));
        assert_eq!(p.rank_dimension, Some(RankDimension::Venue));

        let p = parse("How many articles about cybersecurity?").unwrap();
        assert_eq!(p.intent, Intent::Statistics);
        assert_eq!(p.subjects, ["cybersecurity"]);
        assert_eq!(p.time_range, None);
    }

    #[test]
    fn grammar_variants() {
        let p = parse("Which publishers publish the most on machine learning?").unwrap();
        assert_eq!(p.intent, Intent::Ranking);
        assert_eq!(p.rank_dimension, Some(RankDimension::Publisher));
        assert_eq!(p.top_n, Some(10));
        assert_eq!(p.subjects, ["machine learning"]);

        let p = parse("Top 5 work types for deep learning papers").unwrap();
        assert_eq!((p.top_n, p.rank_dimension), (Some(5), Some(RankDimension::WorkType)));
        assert_eq!(p.subjects, ["deep learning"]);

        let p = parse("Show me the trend in graphene research").unwrap();
        assert_eq!(p.intent, Intent::Trend);
        assert_eq!(p.subjects, ["graphene"]);
        assert_eq!(p.time_range, Some(YearRange::new(2016, 2025)));

        let p = parse("Compare machine learning, deep learning and robotics between 2018 and 2022").unwrap();
        assert_eq!(p.intent, Intent::Comparison);
        assert_eq!(p.subjects, ["machine learning", "deep learning", "robotics"]);
        assert_eq!(p.time_range, Some(YearRange::new(2018, 2022)));

        let p = parse("Number of publications on medical research since 2020").unwrap();
        assert_eq!(p.intent, Intent::Statistics);
        assert_eq!(p.subjects, ["medical"]);
        assert_eq!(p.time_range, Some(YearRange::new(2020, 2026)));

        let p = parse("gene therapy papers 2010-2020").unwrap();
        assert_eq!(p.intent, Intent::Trend);
        assert_eq!(p.subjects, ["gene therapy"]);
    }

    #[test]
    fn rejects_subjectless_questions() {
        assert_eq!(parse("???"), Err(PlanError::NoSubject));
        assert_eq!(parse("how many?"), Err(PlanError::NoSubject));
    }

    #[test]
    fn grammar_is_idempotent() {
        let q = "Top 3 leading venues on CRISPR in 2021";
        assert_eq!(parse(q), parse(q));
    }

    #[test]
    fn validate_examples() {
        let p = validate_plan_json_at(r#"{"intent":"comparison","subjects":["a","b"]}"#, CY).unwrap();
        assert_eq!(p.intent, Intent::Comparison);
        assert!(matches!(
            validate_plan_json_at(r#"{"intent":"flight_booking","subjects":["a"]}"#, CY),
            Err(PlanError::UnknownIntent(_))
        ));
        assert!(matches!(
            validate_plan_json_at(
                r#"{"intent":"trend","subjects":["x"],"time_range":{"from_year":2024,"until_year":2015}}"#,
                CY
            ),
            Err(PlanError::InvertedRange { .. })
        ));
    }

    #[test]
    fn validate_defaults_and_limits() {
        let p = validate_plan_json_at(r#"{"intent":"trend","subjects":["x"]}"#, CY).unwrap();
        assert_eq!(p.time_range, Some(YearRange::new(2016, 2025)));
        let p = validate_plan_json_at(r#"{"intent":"ranking","subjects":["x"]}"#, CY).unwrap();
        assert_eq!((p.top_n, p.rank_dimension), (Some(10), Some(RankDimension::Venue)));
        assert!(validate_plan_json_at(r#"{"intent":"statistics","subjects":[]}"#, CY).is_err());
        assert!(validate_plan_json_at(
            r#"{"intent":"statistics","subjects":["a","b","c","d","e","f"]}"#,
            CY
        )
        .is_err());
        assert!(validate_plan_json_at("{not json", CY).is_err());
        assert!(validate_plan_json_at(r#"{"intent":"ranking","subjects":["x"],"top_n":50}"#, CY).is_err());
        assert!(validate_plan_json_at(
            r#"{"intent":"ranking","subjects":["x"],"rank_dimension":"author"}"#,
            CY
        )
        .is_err());
    }

    #[test]
    fn validate_tolerates_code_fences() {
        let text = "```json\n{\"intent\":\"statistics\",\"subjects\":[\"graphene\"]}\n```";
        assert_eq!(validate_plan_json_at(text, CY).unwrap().subjects, ["graphene"]);
    }

    #[test]
    fn prompt_is_fixed_and_bounded() {
        let a = build_reasoner_prompt(&UserQuery::new("Compare a vs b").unwrap());
        let b = build_reasoner_prompt(&UserQuery::new("Top 3 venues on graphene").unwrap());
        assert_eq!(a.system_prompt, b.system_prompt);
        assert_ne!(a.user_content, b.user_content);
        assert_eq!(extract_question(&a.user_content), Some("Compare a vs b"));

        let long = UserQuery::new("x".repeat(1000)).unwrap();
        let p = build_reasoner_prompt(&long);
        let overhead = estimate_tokens(&format!("{QUESTION_OPEN}{QUESTION_CLOSE}\n{PLAN_SCHEMA_INSTRUCTIONS}"));
        assert!(
            estimate_tokens(p.system_prompt) + estimate_tokens(&p.user_content)
                <= estimate_tokens(REASONER_SYSTEM_PROMPT) + 250 + overhead
        );
    }

    #[test]
    fn plan_json_round_trips_through_validation() {
        for q in [
            "How has quantum computing grown from 2015 to 2024?",
            "Compare CRISPR vs gene therapy",
            "Top 10 journals publishing on graphene",
            "How many articles about cybersecurity?",
        ] {
            let p = parse(q).unwrap();
            assert_eq!(validate_plan_json_at(&plan_to_json(&p), CY).unwrap(), p);
        }
    }
}
