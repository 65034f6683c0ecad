mod common;

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use res_agent::error::ProviderError;
use res_agent::provider::{CallSite, LlmProvider, MockProvider, PromptSpec, ProviderResponse};
use res_agent::service::{router, AppState, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(dir: &std::path::Path) -> ServiceConfig {
    ServiceConfig {
        store_dir: dir.to_path_buf(),
        suite_dir: common::fixture_path("suites"),
        ..ServiceConfig::default()
    }
}

async fn send(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or(Body::empty(), |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, value)
}

async fn wait_finished(app: &Router, run_id: &str) -> Value {
    for _ in 0..500 {
        let (status, body) = send(app, "GET", &format!("/api/runs/{run_id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        if body["status"] != "running" {
            return body;
        }
        tokio::time::sleep(Duration::from_millis(10)).await;
    }
    panic!("run {run_id} did not finish");
}

/// Parses a complete server-sent event body into (event name, data) pairs.
fn parse_sse(text: &str) -> Vec<(String, Value)> {
    text.split("\n\n")
        .filter_map(|block| {
            let mut name = None;
            let mut data = None;
            for line in block.lines() {
                if let Some(v) = line.strip_prefix("event: ").or_else(|| line.strip_prefix("event:")) {
                    name = Some(v.trim().to_string());
                }
                if let Some(v) = line.strip_prefix("data: ").or_else(|| line.strip_prefix("data:")) {
                    data = serde_json::from_str(v.trim()).ok();
                }
            }
            Some((name?, data?))
        })
        .collect()
}

async fn events(app: &Router, run_id: &str) -> Vec<(String, Value)> {
    let req = Request::get(format!("/api/runs/{run_id}/events")).body(Body::empty()).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    parse_sse(&String::from_utf8_lossy(&bytes))
}

#[tokio::test(flavor = "multi_thread")]
async fn health() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(config(dir.path())).unwrap());
    assert_eq!(send(&app, "GET", "/api/health", None).await, (StatusCode::OK, json!({"status": "ok"})));
}

#[tokio::test(flavor = "multi_thread")]
async fn submit_and_inspect_a_run() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(config(dir.path())).unwrap());
    let (status, body) = send(
        &app,
        "POST",
        "/api/query",
        Some(json!({"question": "Compare CRISPR vs gene therapy", "source": "local", "seed": 42, "n": 10000})),
    )
    .await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let run_id = body["run_id"].as_str().unwrap().to_string();

    let record = wait_finished(&app, &run_id).await;
    assert_eq!(record["status"], "completed");
    assert_eq!(record["ledger"]["executor"], json!({"input_tokens": 0, "output_tokens": 0}));
    for section in ["plan", "summary", "narrative", "ledger"] {
        assert!(record.get(section).is_some(), "{section}");
    }
    // No time range, so the comparison is charted over totals.
    assert_eq!(record["narrative"]["chart"]["chart_type"], "bar");
    assert!(common::forbidden_keys_in(&record).is_empty());

    let evs = events(&app, &run_id).await;
    let names: Vec<_> = evs.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        [
            "reasoner_started",
            "reasoner_completed",
            "executor_started",
            "executor_completed",
            "synthesizer_started",
            "synthesizer_completed",
            "run_completed"
        ]
    );
    for (_, data) in &evs {
        assert!(common::forbidden_keys_in(data).is_empty());
        assert_eq!(data["run_id"], run_id.as_str());
    }

    let (_, list) = send(&app, "GET", "/api/runs", None).await;
    assert_eq!(list["total"], 1);
    assert_eq!(list["runs"][0]["run_id"], run_id.as_str());
    assert!(common::forbidden_keys_in(&list).is_empty());
}

#[tokio::test(flavor = "multi_thread")]
async fn bad_requests() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(config(dir.path())).unwrap());
    for body in [
        json!({"question": ""}),
        json!({"question": "   "}),
        json!({"question": "x".repeat(1001)}),
        json!({"question": "ok", "source": "scopus"}),
        json!({"question": "ok", "provider": "gpt"}),
        json!({"question": "ok", "n": 100_000_000}),
        json!({"nothing": true}),
    ] {
        let (status, resp) = send(&app, "POST", "/api/query", Some(body.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(resp["error"].is_string());
    }
    assert_eq!(send(&app, "GET", "/api/runs/nope", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "GET", "/api/runs/nope/events", None).await.0, StatusCode::NOT_FOUND);
    assert_eq!(send(&app, "GET", "/api/bench/nope", None).await.0, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, "POST", "/api/bench", Some(json!({"suite": "../etc/passwd"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test(flavor = "multi_thread")]
async fn live_provider_without_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path());
    cfg.provider.api_key_ref = "RES_TEST_SERVICE_MISSING_KEY".into();
    let app = router(AppState::open(cfg).unwrap());
    let (status, body) = send(&app, "POST", "/api/query", Some(json!({"question": "ok", "provider": "live"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("RES_TEST_SERVICE_MISSING_KEY"));
}

#[tokio::test(flavor = "multi_thread")]
async fn failed_run_is_visible() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(config(dir.path())).unwrap());
    let (_, body) = send(&app, "POST", "/api/query", Some(json!({"question": "???"}))).await;
    let run_id = body["run_id"].as_str().unwrap().to_string();
    let record = wait_finished(&app, &run_id).await;
    assert_eq!(record["status"], "failed");
    assert_eq!(record["failure_reason"], "plan_invalid");
    let names: Vec<_> = events(&app, &run_id).await.into_iter().map(|(n, _)| n).collect();
    assert_eq!(names, ["reasoner_started", "run_failed"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn store_survives_restart_and_pages_newest_first() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(config(dir.path())).unwrap());
    assert_eq!(send(&app, "GET", "/api/runs", None).await.1["runs"], json!([]));
    let mut ids = Vec::new();
    for q in ["How many papers on cancer?", "Top 3 venues on graphene", "Compare vaccine vs immunology"] {
        let (_, body) = send(&app, "POST", "/api/query", Some(json!({"question": q, "n": 500}))).await;
        let id = body["run_id"].as_str().unwrap().to_string();
        wait_finished(&app, &id).await;
        ids.push(id);
    }
    let (_, before) = send(&app, "GET", &format!("/api/runs/{}", ids[1]), None).await;
    drop(app);

    let app = router(AppState::open(config(dir.path())).unwrap());
    let (status, after) = send(&app, "GET", &format!("/api/runs/{}", ids[1]), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(before, after);
    let (_, page) = send(&app, "GET", "/api/runs?limit=2", None).await;
    let listed: Vec<_> = page["runs"].as_array().unwrap().iter().map(|r| r["run_id"].clone()).collect();
    assert_eq!(listed, [json!(ids[2]), json!(ids[1])]);
    assert_eq!(page["total"], 3);
    let (_, page) = send(&app, "GET", "/api/runs?limit=2&offset=2", None).await;
    assert_eq!(page["runs"][0]["run_id"], json!(ids[0]));
    // Events replay from disk after the restart.
    assert_eq!(events(&app, &ids[0]).await.len(), 7);
}

/// Blocks synthesizer calls until released.
struct Gate {
    inner: MockProvider,
    open: Mutex<bool>,
    cv: Condvar,
}

impl Gate {
    fn release(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl LlmProvider for Gate {
    fn name(&self) -> &str {
        "gate"
    }
    fn complete(&self, prompt: &PromptSpec) -> Result<ProviderResponse, ProviderError> {
        if prompt.call_site == CallSite::Synthesizer {
            let guard = self.open.lock().unwrap();
            let _open = self.cv.wait_while(guard, |open| !*open).unwrap();
        }
        self.inner.complete(prompt)
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn reconnect_mid_run_replays_then_tails() {
    let dir = tempfile::tempdir().unwrap();
    let gate = Arc::new(Gate {
        inner: MockProvider::new(),
        open: Mutex::new(false),
        cv: Condvar::new(),
    });
    let app = router(AppState::with_mock(config(dir.path()), gate.clone()).unwrap());
    let (_, body) = send(&app, "POST", "/api/query", Some(json!({"question": "How many papers on cancer?", "n": 300}))).await;
    let run_id = body["run_id"].as_str().unwrap().to_string();

    let req = Request::get(format!("/api/runs/{run_id}/events")).body(Body::empty()).unwrap();
    let mut stream = app.clone().oneshot(req).await.unwrap().into_body();
    let mut seen = String::new();
    while parse_sse(&seen).len() < 5 {
        let frame = tokio::time::timeout(Duration::from_secs(10), stream.frame())
            .await
            .expect("replayed events arrive")
            .unwrap()
            .unwrap();
        if let Ok(data) = frame.into_data() {
            seen.push_str(&String::from_utf8_lossy(&data));
        }
    }
    let replayed: Vec<_> = parse_sse(&seen).into_iter().map(|(n, _)| n).collect();
    assert_eq!(replayed.last().unwrap(), "synthesizer_started");
    assert_eq!(wait_status(&app, &run_id).await, "running");

    gate.release();
    let rest = tokio::time::timeout(Duration::from_secs(10), stream.collect())
        .await
        .expect("stream closes after the terminal event")
        .unwrap()
        .to_bytes();
    seen.push_str(&String::from_utf8_lossy(&rest));
    let names: Vec<_> = parse_sse(&seen).into_iter().map(|(n, _)| n).collect();
    assert_eq!(names.len(), 7);
    assert_eq!(names[5..], ["synthesizer_completed", "run_completed"]);
}

async fn wait_status(app: &Router, run_id: &str) -> String {
    let (_, body) = send(app, "GET", &format!("/api/runs/{run_id}"), None).await;
    body["status"].as_str().unwrap_or_default().to_string()
}

#[tokio::test(flavor = "multi_thread")]
async fn bench_endpoint_reports_progress_and_result() {
    let dir = tempfile::tempdir().unwrap();
    let app = router(AppState::open(config(dir.path())).unwrap());
    let (status, body) = send(&app, "POST", "/api/bench", Some(json!({"suite": "default", "mode": "mock", "runs": 1}))).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let id = body["bench_id"].as_str().unwrap().to_string();
    let mut state = Value::Null;
    for _ in 0..1000 {
        state = send(&app, "GET", &format!("/api/bench/{id}"), None).await.1;
        if state["status"] != "running" {
            break;
        }
        tokio::time::sleep(Duration::from_millis(20)).await;
    }
    assert_eq!(state["status"], "completed", "{state}");
    assert_eq!(state["total_runs"], 20);
    assert_eq!(state["completed_runs"], 20);
    assert_eq!(state["report"]["runs"].as_array().unwrap().len(), 20);
    assert!(dir.path().join(format!("bench-{id}.json")).exists());

    let (status, _) = send(&app, "POST", "/api/bench", Some(json!({"suite": "small"}))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "suite file without five questions per intent");
}
