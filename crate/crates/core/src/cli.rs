//! Command-line front end: `ask`, `bench`, `verify`, `serve`.
//!
//! Exit codes: 0 success, 1 verification or benchmark assertion failure, 2 usage or
//! configuration error. Defaults are offline (local synthetic source, mock provider).

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use crate::bench::{
    self, export_figure_data, BenchConfig, DEFAULT_SIZES, DEFAULT_VERIFY_QUERY, FLATNESS_TOLERANCE,
};
use crate::datasources::crossref::{CrossrefConfig, CrossrefSource};
use crate::datasources::synthetic::SyntheticSource;
use crate::datasources::DataSource;
use crate::executor::{self, ExecuteFn};
use crate::pipeline::Pipeline;
use crate::provider::{provider_from_config, LlmProvider, MockProvider, ProviderConfig, ProviderKind};
use crate::service::{self, AppState, ServiceConfig, DEFAULT_N, DEFAULT_SEED};
use crate::tokens::{ledger_total, to_canonical_json};
use crate::types::{RunLedger, UserQuery};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "res", version, about = "Answer research questions from aggregate statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Local,
    Crossref,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProviderArg {
    Mock,
    Live,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Answer one question.
    Ask {
        question: String,
        #[arg(long, value_enum, default_value = "local")]
        source: SourceArg,
        #[arg(long, value_enum, default_value = "mock")]
        provider: ProviderArg,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_N)]
        n: usize,
        /// Mock responses as a JSON list of {"match", "response"}.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Print the plan, summary and token ledger.
        #[arg(long)]
        show_layers: bool,
        /// Print the full run record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Run the benchmark suite and write the report plus figure data.
    Bench {
        /// Suite file; the bundled 20-question suite when omitted.
        #[arg(long)]
        suite: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        runs: u32,
        #[arg(long, value_enum, default_value = "mock")]
        mode: ProviderArg,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "local")]
        source: SourceArg,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_N)]
        n: usize,
        /// Dataset sizes for the invariance figures.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
        sizes: Vec<usize>,
        /// Skip the invariance figures.
        #[arg(long)]
        no_invariance: bool,
    },
    /// Check that token cost stays flat as the dataset grows.
    Verify {
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SIZES)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long, default_value = DEFAULT_VERIFY_QUERY)]
        query: String,
        /// Also write the report as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        store_dir: Option<PathBuf>,
    },
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

macro_rules! say {
    ($w:expr, $($arg:tt)*) => {{
        let _ = writeln!($w, $($arg)*);
    }};
}

/// Parses `args` (including the program name) and runs the command.
pub fn run(args: impl IntoIterator<Item = String>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    run_with_executor(args, executor::execute, out, err)
}

/// Like [`run`] with a replacement executor, for negative-control experiments.
pub fn run_with_executor(
    args: impl IntoIterator<Item = String>,
    executor: ExecuteFn,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    let mut io = Io { out, err };
    let pipeline = Pipeline::default().with_executor(executor);
    match cli.command {
        Command::Ask {
            question,
            source,
            provider,
            seed,
            n,
            fixtures,
            show_layers,
            json,
        } => cmd_ask(&mut io, pipeline, AskArgs { question, source, provider, seed, n, fixtures, show_layers, json }),
        Command::Bench {
            suite,
            runs,
            mode,
            out,
            source,
            seed,
            n,
            sizes,
            no_invariance,
        } => cmd_bench(
            &mut io,
            pipeline,
            BenchArgs { suite, runs, mode, out, source, seed, n, sizes: (!no_invariance).then_some(sizes) },
        ),
        Command::Verify { sizes, seed, query, out } => cmd_verify(&mut io, pipeline, &sizes, seed, &query, out),
        Command::Serve { port, store_dir } => cmd_serve(&mut io, port, store_dir),
    }
}

fn usage(io: &mut Io<'_>, message: impl std::fmt::Display) -> i32 {
    say!(io.err, "error: {message}");
    EXIT_USAGE
}

fn build_provider(kind: ProviderArg, fixtures: Option<&PathBuf>) -> Result<Arc<dyn LlmProvider>, String> {
    match kind {
        ProviderArg::Mock => match fixtures {
            Some(path) => MockProvider::from_fixture_file(path)
                .map(|m| Arc::new(m) as Arc<dyn LlmProvider>)
                .map_err(|e| format!("{}: {e}", path.display())),
            None => Ok(Arc::new(MockProvider::new())),
        },
        ProviderArg::Live => {
            let config = ServiceConfig::from_env()?.provider;
            let config = ProviderConfig {
                kind: ProviderKind::Live,
                ..config
            };
            config.api_key().map_err(|e| {
                format!("live mode needs an API key in ${}: {e}", config.api_key_ref)
            })?;
            provider_from_config(&config).map_err(|e| e.to_string())
        }
    }
}

fn build_source(kind: SourceArg, seed: u64, n: usize) -> Result<Arc<dyn DataSource>, String> {
    match kind {
        SourceArg::Local => Ok(Arc::new(SyntheticSource::generate(seed, n))),
        SourceArg::Crossref => {
            let mailto = ServiceConfig::from_env()?.crossref_mailto;
            let config = CrossrefConfig {
                mailto,
                ..CrossrefConfig::default()
            };
            CrossrefSource::live(config)
                .map(|s| Arc::new(s) as Arc<dyn DataSource>)
                .map_err(|e| e.to_string())
        }
    }
}

fn print_ledger(w: &mut dyn Write, ledger: &RunLedger) {
    say!(w, "{:<12} {:>8} {:>8} {:>8}", "layer", "input", "output", "total");
    for (name, u) in [
        ("reasoner", ledger.reasoner),
        ("executor", ledger.executor),
        ("synthesizer", ledger.synthesizer),
    ] {
        say!(w, "{:<12} {:>8} {:>8} {:>8}", name, u.input_tokens, u.output_tokens, u.total());
    }
    say!(w, "{:<12} {:>26}", "total", ledger_total(ledger));
}

struct AskArgs {
    question: String,
    source: SourceArg,
    provider: ProviderArg,
    seed: u64,
    n: usize,
    fixtures: Option<PathBuf>,
    show_layers: bool,
    json: bool,
}

fn cmd_ask(io: &mut Io<'_>, pipeline: Pipeline, args: AskArgs) -> i32 {
    let query = match UserQuery::new(&args.question) {
        Ok(q) => q,
        Err(e) => return usage(io, format!("{e}\nusage: res ask <QUESTION> [OPTIONS]")),
    };
    let provider = match build_provider(args.provider, args.fixtures.as_ref()) {
        Ok(p) => p,
        Err(e) => return usage(io, e),
    };
    let source = match build_source(args.source, args.seed, args.n) {
        Ok(s) => s,
        Err(e) => return usage(io, e),
    };
    let record = pipeline.run(&query, source.as_ref(), provider.as_ref());

    if args.json {
        say!(io.out, "{}", serde_json::to_string_pretty(&record).expect("record serializes"));
    } else {
        if args.show_layers {
            if let Some(plan) = &record.plan {
                say!(io.out, "== plan\n{}", to_canonical_json(plan));
            }
            if let Some(summary) = &record.summary {
                say!(io.out, "== summary\n{}", to_canonical_json(summary));
            }
            say!(io.out, "== ledger");
            print_ledger(io.out, &record.ledger);
            say!(io.out, "== narrative");
        }
        if let Some(n) = &record.narrative {
            say!(io.out, "{}", n.text);
        }
    }
    match (record.failure_reason, &record.failure_detail) {
        (Some(reason), detail) => {
            say!(io.err, "run failed ({}): {}", reason.as_str(), detail.as_deref().unwrap_or(""));
            EXIT_ASSERTION
        }
        _ => EXIT_OK,
    }
}

struct BenchArgs {
    suite: Option<PathBuf>,
    runs: u32,
    mode: ProviderArg,
    out: PathBuf,
    source: SourceArg,
    seed: u64,
    n: usize,
    sizes: Option<Vec<usize>>,
}

fn cmd_bench(io: &mut Io<'_>, pipeline: Pipeline, args: BenchArgs) -> i32 {
    let suite = match &args.suite {
        None => bench::default_suite(),
        Some(path) if !path.exists() => {
            return usage(io, format!("suite file {} does not exist", path.display()))
        }
        Some(path) => match bench::load_suite(path) {
            Ok(s) => s,
            Err(e) => return usage(io, format!("{}: {e}", path.display())),
        },
    };
    if args.runs == 0 {
        return usage(io, "--runs must be at least 1");
    }
    let provider = match build_provider(args.mode, None) {
        Ok(p) => p,
        Err(e) => return usage(io, e),
    };
    let corpus = SyntheticSource::generate(args.seed, args.n);
    let crossref;
    let source: &dyn DataSource = match args.source {
        SourceArg::Local => &corpus,
        SourceArg::Crossref => match build_source(SourceArg::Crossref, args.seed, args.n) {
            Ok(s) => {
                crossref = s;
                crossref.as_ref()
            }
            Err(e) => return usage(io, e),
        },
    };
    let config = BenchConfig {
        runs_per_query: args.runs,
        pipeline,
        ..BenchConfig::default()
    };
    let report = match bench::run_benchmark(&suite, &config, source, provider.as_ref(), corpus.records()) {
        Ok(r) => r,
        Err(e) => return usage(io, e),
    };
    let invariance = match &args.sizes {
        Some(sizes) => match bench::verify_invariance_with(pipeline, sizes, DEFAULT_VERIFY_QUERY, args.seed) {
            Ok(r) => Some(r),
            Err(e) => return usage(io, e),
        },
        None => None,
    };

    if let Err(e) = std::fs::create_dir_all(&args.out)
        .map_err(|e| e.to_string())
        .and_then(|_| {
            let body = serde_json::to_vec_pretty(&report).map_err(|e| e.to_string())?;
            std::fs::write(args.out.join("report.json"), body).map_err(|e| e.to_string())?;
            if let Some(inv) = &invariance {
                let body = serde_json::to_vec_pretty(inv).map_err(|e| e.to_string())?;
                std::fs::write(args.out.join("invariance.json"), body).map_err(|e| e.to_string())?;
            }
            export_figure_data(&args.out, Some(&report), invariance.as_ref()).map_err(|e| e.to_string())
        })
    {
        return usage(io, format!("writing {}: {e}", args.out.display()));
    }

    say!(
        io.out,
        "runs: {} ({} completed, {} failed)",
        report.runs.len(),
        report.completed_count,
        report.failed_count
    );
    say!(io.out, "pipeline tokens: mean {:.1}, stddev {:.1}", report.res_mean, report.res_stddev);
    say!(io.out, "naive tokens: mean {:.1}", report.naive_mean);
    say!(io.out, "savings: {:.1}%", report.savings_fraction * 100.0);
    for id in &report.flagged_queries {
        say!(io.err, "warning: every run of {id} failed");
    }
    say!(io.out, "wrote {}", args.out.display());

    let executor_spent = report
        .runs
        .iter()
        .any(|r| r.ledger.executor.total() != 0);
    if executor_spent {
        say!(io.err, "assertion failed: executor consumed model tokens");
        return EXIT_ASSERTION;
    }
    if report.completed_count == 0 {
        say!(io.err, "assertion failed: no run completed");
        return EXIT_ASSERTION;
    }
    if report.savings_flagged {
        say!(io.err, "warning: pipeline used more tokens than the naive baseline");
    }
    EXIT_OK
}

fn cmd_verify(
    io: &mut Io<'_>,
    pipeline: Pipeline,
    sizes: &[usize],
    seed: u64,
    query: &str,
    out: Option<PathBuf>,
) -> i32 {
    let report = match bench::verify_invariance_with(pipeline, sizes, query, seed) {
        Ok(r) => r,
        Err(e) => return usage(io, e),
    };
    say!(
        io.out,
        "{:>10} {:>12} {:>18} {:>18}",
        "n",
        "res_tokens",
        "naive_model_tokens",
        "executor_requests"
    );
    for e in &report.entries {
        say!(
            io.out,
            "{:>10} {:>12} {:>18.0} {:>18}",
            e.n,
            e.res_tokens,
            e.naive_model_tokens,
            e.executor_requests
        );
    }
    say!(io.out, "flatness_ratio {:.4} (limit {FLATNESS_TOLERANCE})", report.flatness_ratio);
    if let Some(path) = out {
        let written = serde_json::to_vec_pretty(&report)
            .map_err(|e| e.to_string())
            .and_then(|b| std::fs::write(&path, b).map_err(|e| e.to_string()));
        if let Err(e) = written {
            return usage(io, format!("writing {}: {e}", path.display()));
        }
    }
    if report.is_flat() {
        EXIT_OK
    } else {
        say!(io.err, "token cost grew with dataset size");
        EXIT_ASSERTION
    }
}

fn cmd_serve(io: &mut Io<'_>, port: Option<u16>, store_dir: Option<PathBuf>) -> i32 {
    let mut config = match ServiceConfig::from_env() {
        Ok(c) => c,
        Err(e) => return usage(io, e),
    };
    if let Some(p) = port {
        config.port = p;
    }
    if let Some(d) = store_dir {
        config.store_dir = d;
    }
    let addr = match config.socket_addr() {
        Ok(a) => a,
        Err(e) => return usage(io, e),
    };
    let runtime = match tokio::runtime::Builder::new_multi_thread().enable_all().build() {
        Ok(r) => r,
        Err(e) => return usage(io, format!("cannot start runtime: {e}")),
    };
    let state = match AppState::open(config) {
        Ok(s) => s,
        Err(e) => return usage(io, format!("cannot open store: {e}")),
    };
    let listener = match runtime.block_on(tokio::net::TcpListener::bind(addr)) {
        Ok(l) => l,
        Err(e) => return usage(io, format!("cannot listen on {addr}: {e}")),
    };
    let local = listener.local_addr().map(|a| a.to_string()).unwrap_or_default();
    say!(io.out, "listening on http://{local}");
    let _ = io.out.flush();
    let shutdown = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    match runtime.block_on(service::serve(listener, state, shutdown)) {
        Ok(()) => {
            say!(io.out, "shut down");
            EXIT_OK
        }
        Err(e) => {
            say!(io.err, "server error: {e}");
            EXIT_USAGE
        }
    }
}
