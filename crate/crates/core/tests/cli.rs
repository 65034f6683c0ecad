mod common;

use std::io::{BufRead, BufReader};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use res_agent::cli::{run_with_executor, EXIT_ASSERTION, EXIT_OK, EXIT_USAGE};
use res_agent::types::RunRecord;

fn res() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_res"));
    cmd.env_remove("RES_API_KEY_VAR")
        .env_remove("ANTHROPIC_API_KEY")
        .env_remove("RES_PORT")
        .env_remove("RES_PROVIDER");
    cmd
}

fn output(args: &[&str]) -> (i32, String, String) {
    let out = res().args(args).output().unwrap();
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8(out.stdout).unwrap(),
        String::from_utf8(out.stderr).unwrap(),
    )
}

const ASK: [&str; 10] = [
    "ask",
    "Compare CRISPR vs gene therapy",
    "--source",
    "local",
    "--provider",
    "mock",
    "--seed",
    "42",
    "--n",
    "10000",
];

#[test]
fn ask_is_deterministic() {
    let (code, first, _) = output(&ASK);
    assert_eq!(code, 0);
    assert!(first.contains("CRISPR") && first.contains("gene therapy"), "{first}");
    assert_eq!(output(&ASK).1, first);
}

#[test]
fn ask_json_is_a_run_record() {
    let mut args = ASK.to_vec();
    args.push("--json");
    let (code, out, _) = output(&args);
    assert_eq!(code, 0);
    let record: RunRecord = serde_json::from_str(&out).unwrap();
    assert!(record.is_completed());
    assert_eq!(record.ledger.executor.total(), 0);
}

#[test]
fn ask_show_layers_prints_each_layer() {
    let mut args = ASK.to_vec();
    args.push("--show-layers");
    let (code, out, _) = output(&args);
    assert_eq!(code, 0);
    for section in ["== plan", "== summary", "== ledger", "executor", "== narrative"] {
        assert!(out.contains(section), "{section}: {out}");
    }
}

#[test]
fn ask_with_fixture_responses() {
    let fixtures = common::fixture_path("mock_responses.json");
    let (code, out, _) = output(&[
        "ask",
        "Which venues lead graphene research?",
        "--n",
        "3000",
        "--fixtures",
        fixtures.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    assert_eq!(out.trim(), "The ranking above lists the venues with the most matching records.");
}

#[test]
fn usage_errors_exit_2() {
    let (code, _, err) = output(&["ask", ""]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("usage"));
    assert_eq!(output(&["bench", "--suite", "missing.json"]).0, EXIT_USAGE);
    assert_eq!(output(&["serve", "--port", "99999"]).0, EXIT_USAGE);
    let (code, _, err) = output(&["bench", "--mode", "live", "--runs", "1"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("API key"), "{err}");
    let (code, _, err) = output(&["ask", "Stats on graphene", "--provider", "live"]);
    assert_eq!(code, EXIT_USAGE);
    assert!(err.contains("ANTHROPIC_API_KEY"), "{err}");
}

#[test]
fn failed_run_exits_nonzero() {
    let (code, _, err) = output(&["ask", "???", "--n", "100"]);
    assert_ne!(code, 0);
    assert!(err.contains("plan_invalid"), "{err}");
}

#[test]
fn bench_writes_report_and_figures() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let (code, stdout, stderr) = output(&[
        "bench",
        "--runs",
        "1",
        "--n",
        "2000",
        "--sizes",
        "100,1000",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code, 0, "{stdout}{stderr}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["runs"].as_array().unwrap().len(), 20);
    assert_eq!(report["failed_count"], 0);
    for f in res_agent::bench::FIGURE_FILES {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let layers = std::fs::read_to_string(out_dir.join("fig6_layers.csv")).unwrap();
    let rows: Vec<_> = layers.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1], "executor,0.0");
    let scaling = std::fs::read_to_string(out_dir.join("fig3_scaling.csv")).unwrap();
    let last = scaling.lines().last().unwrap();
    assert!(last.starts_with("16273710,"), "{last}");
    let naive: f64 = last.rsplit(',').next().unwrap().parse().unwrap();
    assert!((naive / 1.87e9 - 1.0).abs() < 0.01, "{naive}");
}

#[test]
fn verify_passes_and_single_size_is_identity() {
    let (code, out, _) = output(&["verify", "--sizes", "100,1000,10000", "--seed", "42"]);
    assert_eq!(code, EXIT_OK, "{out}");
    assert!(out.contains("flatness_ratio"));
    let (code, out, _) = output(&["verify", "--sizes", "5000"]);
    assert_eq!(code, EXIT_OK);
    assert!(out.contains("flatness_ratio 1.0000"));
}

#[test]
fn verify_catches_a_leaky_executor() {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let args = ["res", "verify", "--sizes", "100,1000,10000", "--seed", "42"].map(String::from);
    let code = run_with_executor(args, common::leaky_execute, &mut out, &mut err);
    assert_eq!(code, EXIT_ASSERTION, "{}", String::from_utf8_lossy(&out));
}

#[cfg(unix)]
#[test]
fn serve_answers_health_and_stops_on_interrupt() {
    let dir = tempfile::tempdir().unwrap();
    let mut child = res()
        .args(["serve", "--port", "0", "--store-dir", dir.path().to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let base = line.trim().strip_prefix("listening on ").expect("startup line").to_string();

    let body = reqwest::blocking::get(format!("{base}/api/health")).unwrap().text().unwrap();
    assert_eq!(body, r#"{"status":"ok"}"#);

    // A second server on the same port cannot start.
    let port = base.rsplit(':').next().unwrap();
    let (code, _, err) = output(&["serve", "--port", port, "--store-dir", dir.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_USAGE, "{err}");

    Command::new("kill").args(["-INT", &child.id().to_string()]).status().unwrap();
    let deadline = Instant::now() + Duration::from_secs(10);
    let status = loop {
        if let Some(s) = child.try_wait().unwrap() {
            break s;
        }
        assert!(Instant::now() < deadline, "server did not stop");
        std::thread::sleep(Duration::from_millis(50));
    };
    assert_eq!(status.code(), Some(0));
}
