//! Show the count-only requests the Crossref client issues for each intent.
//!
//! Runs against a scripted transport by default. Pass `--live` to query api.crossref.org.

use std::sync::Arc;

use res_agent::datasources::crossref::{CrossrefConfig, CrossrefSource};
use res_agent::datasources::http::{HttpResponse, ScriptedTransport};
use res_agent::executor::execute;
use res_agent::tokens::to_canonical_json;
use res_agent::types::{Intent, QueryPlan, RankDimension, YearRange};

fn main() {
    let live = std::env::args().any(|a| a == "--live");
    let transport = ScriptedTransport::new(|req| {
        let body = if req.url.contains("facet=") {
            r#"{"message":{"total-results":188344,"facets":{"container-title":{"values":{"Carbon":4120,"ACS Nano":3871,"Nanoscale":3302}}}}}"#
        } else {
            r#"{"message":{"total-results":42453}}"#
        };
        Ok(HttpResponse::ok(body))
    });
    let config = CrossrefConfig {
        mailto: std::env::var("RES_CROSSREF_MAILTO").unwrap_or_else(|_| CrossrefConfig::default().mailto),
        ..CrossrefConfig::default()
    };
    let source = if live {
        CrossrefSource::live(config).expect("http client")
    } else {
        CrossrefSource::new(config, Arc::new(transport.clone()))
    };

    let plans = [
        QueryPlan {
            intent: Intent::Statistics,
            subjects: vec!["cybersecurity".into()],
            time_range: None,
            top_n: None,
            rank_dimension: None,
        },
        QueryPlan {
            intent: Intent::Trend,
            subjects: vec!["graphene".into()],
            time_range: Some(YearRange::new(2020, 2024)),
            top_n: None,
            rank_dimension: None,
        },
        QueryPlan {
            intent: Intent::Ranking,
            subjects: vec!["graphene".into()],
            time_range: None,
            top_n: Some(3),
            rank_dimension: Some(RankDimension::Venue),
        },
    ];
    for plan in &plans {
        match execute(plan, &source) {
            Ok(summary) => println!("{}: {}", plan.intent.as_str(), to_canonical_json(&summary.totals)),
            Err(e) => println!("{}: {e}", plan.intent.as_str()),
        }
    }
    if !live {
        println!("\nrequests:");
        for url in transport.urls() {
            println!("  {url}");
        }
    }
}
