//! Compare the executor against the brute-force reference on random corpora.

use res_agent::datasources::oracle::brute_force_aggregate;
use res_agent::datasources::synthetic::{generate_synthetic, SyntheticSource};
use res_agent::executor::execute;
use res_agent::tokens::serialize_canonical;
use res_agent::types::{Intent, QueryPlan, RankDimension, YearRange};

fn main() {
    let plans = [
        QueryPlan {
            intent: Intent::Trend,
            subjects: vec!["deep learning".into()],
            time_range: Some(YearRange::new(2000, 2024)),
            top_n: None,
            rank_dimension: None,
        },
        QueryPlan {
            intent: Intent::Comparison,
            subjects: vec!["CRISPR".into(), "gene therapy".into(), "vaccine".into()],
            time_range: None,
            top_n: None,
            rank_dimension: None,
        },
        QueryPlan {
            intent: Intent::Ranking,
            subjects: vec!["graphene".into()],
            time_range: Some(YearRange::new(2010, 2020)),
            top_n: Some(5),
            rank_dimension: Some(RankDimension::Publisher),
        },
        QueryPlan {
            intent: Intent::Statistics,
            subjects: vec!["neuroscience".into()],
            time_range: None,
            top_n: None,
            rank_dimension: None,
        },
    ];
    let mut mismatches = 0;
    for (seed, n) in [(1u64, 0usize), (2, 1), (3, 1_000), (4, 50_000)] {
        let records = generate_synthetic(seed, n);
        let source = SyntheticSource::from_records(records.clone());
        for plan in &plans {
            let fast = serialize_canonical(&execute(plan, &source).expect("synthetic source does not fail"));
            let slow = serialize_canonical(&brute_force_aggregate(&records, plan));
            let same = fast == slow;
            mismatches += usize::from(!same);
            println!("seed {seed} n {n:>6} {:<10} {}", plan.intent.as_str(), if same { "match" } else { "MISMATCH" });
        }
    }
    println!("{mismatches} mismatches");
    std::process::exit(i32::from(mismatches > 0));
}
