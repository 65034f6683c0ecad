//! Prompt size of the naive approach grows with every record it includes.

use res_agent::bench::{naive_cost, run_naive_baseline, NaiveCostModel, FULL_SCALE_N};
use res_agent::datasources::synthetic::generate_synthetic;
use res_agent::provider::MockProvider;
use res_agent::UserQuery;

fn main() {
    let corpus = generate_synthetic(42, 1_600);
    let query = UserQuery::new("What has been published on machine learning?").unwrap();
    let provider = MockProvider::new();
    println!("{:>8}  {:>12}", "records", "input tokens");
    for n in [1, 50, 100, 200, 400, 800, 1_600] {
        let usage = run_naive_baseline(&query, &corpus[..n], &provider).expect("mock provider");
        println!("{n:>8}  {:>12}", usage.input_tokens);
    }
    let model = NaiveCostModel::reference();
    println!(
        "\ncost model: {:.2} tokens per record + {} prompt tokens; {} records would need {:.3e} tokens",
        model.mean_record_tokens,
        model.prompt_overhead,
        FULL_SCALE_N,
        naive_cost(FULL_SCALE_N, &model)
    );
}
