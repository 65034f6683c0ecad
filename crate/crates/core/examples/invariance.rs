//! Token cost stays flat while the dataset grows by four orders of magnitude.
//!
//! cargo run --release --example invariance

use res_agent::bench::{verify_invariance, DEFAULT_SIZES, DEFAULT_VERIFY_QUERY};

fn main() {
    let report = verify_invariance(&DEFAULT_SIZES, DEFAULT_VERIFY_QUERY, 42).expect("verification runs");
    println!("{:>9}  {:>10}  {:>9}  {:>15}  {:>16}", "n", "res_tokens", "requests", "records_scanned", "naive_model");
    for e in &report.entries {
        println!(
            "{:>9}  {:>10}  {:>9}  {:>15}  {:>16.0}",
            e.n, e.res_tokens, e.executor_requests, e.records_scanned, e.naive_model_tokens
        );
    }
    println!("flatness ratio {:.4} (naive model grows {:.0}x)", report.flatness_ratio, report.naive_growth());
}
