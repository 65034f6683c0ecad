//! Answer questions offline and show what each layer produced.
//!
//! cargo run --example ask_offline -- "Top 5 venues publishing on quantum computing"

use res_agent::datasources::synthetic::SyntheticSource;
use res_agent::provider::MockProvider;
use res_agent::tokens::{ledger_total, to_canonical_json};
use res_agent::{run_pipeline, UserQuery};

fn main() {
    let questions: Vec<String> = match std::env::args().skip(1).collect::<Vec<_>>() {
        args if !args.is_empty() => args,
        _ => vec![
            "How has quantum computing research grown from 2015 to 2024?".into(),
            "Compare CRISPR vs gene therapy".into(),
            "Top 5 venues publishing on machine learning".into(),
            "How many papers have been published on cybersecurity?".into(),
        ],
    };
    let source = SyntheticSource::generate(42, 10_000);
    let provider = MockProvider::new();

    for q in questions {
        let query = match UserQuery::new(&q) {
            Ok(query) => query,
            Err(e) => {
                eprintln!("{q:?}: {e}");
                continue;
            }
        };
        let record = run_pipeline(&query, &source, &provider);
        println!("Q: {q}");
        if let Some(plan) = &record.plan {
            println!("plan:    {}", to_canonical_json(plan));
        }
        if let Some(summary) = &record.summary {
            println!("summary: {} chars", to_canonical_json(summary).len());
        }
        match &record.narrative {
            Some(n) => println!("answer:  {}", n.text),
            None => println!("failed:  {}", record.failure_detail.unwrap_or_default()),
        }
        let l = record.ledger;
        println!(
            "tokens:  reasoner {} + executor {} + synthesizer {} = {}\n",
            l.reasoner.total(),
            l.executor.total(),
            l.synthesizer.total(),
            ledger_total(&l)
        );
    }
}
