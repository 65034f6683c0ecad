mod common;

use res_agent::datasources::crossref::{CrossrefConfig, CrossrefSource, YearlyStrategy};
use res_agent::datasources::http::{HttpResponse, ScriptedTransport};
use res_agent::datasources::DataSource;
use res_agent::executor::execute;
use res_agent::pipeline::Pipeline;
use res_agent::provider::MockProvider;
use res_agent::types::{Intent, QueryPlan, RankDimension, UserQuery, YearRange};
use std::sync::Arc;

#[test]
fn pipeline_over_scripted_crossref() {
    let (source, transport) = common::scripted_crossref();
    let record = Pipeline::default().run(
        &UserQuery::new("How many papers have been published on cybersecurity?").unwrap(),
        source.as_ref(),
        &MockProvider::new(),
    );
    assert!(record.is_completed(), "{:?}", record.failure_detail);
    let summary = record.summary.unwrap();
    assert_eq!(summary.totals["cybersecurity"], 42_453);
    assert_eq!(summary.metadata.source_name, "crossref");
    assert_eq!(summary.metadata.dataset_size_estimate, 165_283_117);
    assert!(record.narrative.unwrap().text.contains("42453"));
    assert!(transport.urls().iter().all(|u| u.contains("rows=0") && u.contains("mailto=tests@example.org")));
}

#[test]
fn ranking_uses_server_side_facets() {
    let (source, transport) = common::scripted_crossref();
    let plan = QueryPlan {
        intent: Intent::Ranking,
        subjects: vec!["graphene".into()],
        time_range: None,
        top_n: Some(3),
        rank_dimension: Some(RankDimension::Venue),
    };
    let summary = execute(&plan, source.as_ref()).unwrap();
    let labels: Vec<_> = summary.series[0].points.iter().map(|p| p.label.as_str()).collect();
    assert_eq!(labels, ["Carbon", "ACS Nano", "Nanoscale"]);
    assert!(transport.urls().iter().any(|u| u.contains("facet=container-title:3")));
}

#[test]
fn year_facet_strategy_fills_missing_years() {
    let body = common::fixture("crossref/gene_therapy_years.json");
    let transport = ScriptedTransport::new(move |_| Ok(HttpResponse::ok(body.clone())));
    let source = CrossrefSource::new(
        CrossrefConfig {
            yearly_strategy: YearlyStrategy::YearFacet,
            ..CrossrefConfig::default()
        },
        Arc::new(transport.clone()),
    );
    let counts = source.yearly_counts("gene therapy", 2019, 2023).unwrap();
    assert_eq!(counts, [(2019, 0), (2020, 9015), (2021, 9822), (2022, 10457), (2023, 11230)]);
    assert_eq!(transport.urls().len(), 1);
}

#[test]
fn per_year_strategy_issues_one_request_per_year() {
    let (source, transport) = common::scripted_crossref();
    let counts = source.yearly_counts("graphene", 2015, 2024).unwrap();
    assert_eq!(counts.len(), 10);
    assert_eq!(transport.urls().len(), 10);
    assert!(transport.urls()[0].contains("filter=from-pub-date:2015-01-01,until-pub-date:2015-12-31"));
    // Repeating the query is served from the cache.
    source.yearly_counts("graphene", 2015, 2024).unwrap();
    assert_eq!(transport.urls().len(), 10);
    assert_eq!(source.stats().requests, 10);
}

#[test]
fn trend_plan_over_crossref_fits_contract() {
    let (source, _) = common::scripted_crossref();
    let plan = QueryPlan {
        intent: Intent::Trend,
        subjects: vec!["graphene".into(), "photonics".into()],
        time_range: Some(YearRange::new(1990, 2024)),
        top_n: None,
        rank_dimension: None,
    };
    let summary = execute(&plan, source.as_ref()).unwrap();
    assert!(res_agent::tokens::summary_tokens(&summary) <= res_agent::tokens::K_MAX);
}
