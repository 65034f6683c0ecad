//! Run the bundled 20-question suite five times each and export figure data.
//!
//! cargo run --release --example benchmark -- target/bench-out

use res_agent::bench::{self, export_figure_data, verify_invariance, BenchConfig, DEFAULT_SIZES, DEFAULT_VERIFY_QUERY};
use res_agent::datasources::synthetic::SyntheticSource;
use res_agent::provider::MockProvider;

fn main() {
    let out = std::env::args().nth(1).unwrap_or_else(|| "target/bench-out".into());
    let corpus = SyntheticSource::generate(42, 10_000);
    let report = bench::run_benchmark(
        &bench::default_suite(),
        &BenchConfig::default(),
        &corpus,
        &MockProvider::new(),
        corpus.records(),
    )
    .expect("bundled suite is valid");
    let invariance = verify_invariance(&DEFAULT_SIZES, DEFAULT_VERIFY_QUERY, 42).expect("verification runs");

    for (intent, totals) in bench::totals_by_intent(&report) {
        let mean = totals.iter().sum::<u64>() as f64 / totals.len() as f64;
        println!("{intent:<11} {:>3} runs, mean {mean:.1} tokens", totals.len());
    }
    println!(
        "pipeline {:.1} ± {:.1} tokens, naive {:.1}, savings {:.1}%, {} failed",
        report.res_mean,
        report.res_stddev,
        report.naive_mean,
        report.savings_fraction * 100.0,
        report.failed_count
    );
    for path in export_figure_data(&out, Some(&report), Some(&invariance)).expect("writable output directory") {
        println!("wrote {}", path.display());
    }
}
