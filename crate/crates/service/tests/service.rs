use std::path::Path;
use std::sync::{Arc, Mutex};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use chrono::{DateTime, Duration, Utc};
use http_body_util::BodyExt;
use react_tod::llm::{BackendError, Completion, CompletionBackend, CompletionRequest};
use react_tod_service::{router, AppState, Campaign, Clock, EventLog, ServiceConfig, SystemKind};
use serde_json::{json, Value};
use tower::ServiceExt;

fn config(dir: &Path) -> ServiceConfig {
    ServiceConfig { event_log: dir.join("events.jsonl"), seed: Some(1), ..ServiceConfig::default() }
}

fn react_only(dir: &Path) -> ServiceConfig {
    ServiceConfig { baseline: false, ..config(dir) }
}

fn fixed_clock() -> (Clock, Arc<Mutex<DateTime<Utc>>>) {
    let now = Arc::new(Mutex::new(Utc::now()));
    let handle = now.clone();
    (Arc::new(move || *handle.lock().unwrap()), now)
}

fn app(config: &ServiceConfig) -> Router {
    router(AppState::open(config, Arc::new(Utc::now)).unwrap(), config.static_dir.as_deref())
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let request = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let request = match body {
        Some(b) => request.body(Body::from(b.to_string())),
        None => request.body(Body::empty()),
    }
    .unwrap();
    let response = app.clone().oneshot(request).await.unwrap();
    let status = response.status();
    let bytes = response.into_body().collect().await.unwrap().to_bytes();
    let value = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

async fn create(app: &Router) -> String {
    let (status, body) = call(app, "POST", "/api/session", None).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    assert!(body["goal_text"].as_str().unwrap().starts_with("You are looking for"));
    assert!(!body["instructions"].as_str().unwrap().is_empty());
    body["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, id: &str, text: &str) -> (StatusCode, Value) {
    call(app, "POST", &format!("/api/session/{id}/message"), Some(json!({ "text": text }))).await
}

async fn rate(app: &Router, id: &str, success: bool, satisfaction: u8) -> (StatusCode, Value) {
    call(app, "POST", &format!("/api/session/{id}/rating"), Some(json!({ "success": success, "satisfaction": satisfaction }))).await
}

#[tokio::test]
async fn full_flow_replays_to_the_same_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path());
    let app = app(&cfg);
    for round in 0..4 {
        let id = create(&app).await;
        for (i, text) in ["I am looking for a police station.", "Can you give me the address of the police station please?", "Thank you, goodbye."]
            .iter()
            .enumerate()
        {
            let (status, body) = say(&app, &id, text).await;
            assert_eq!(status, StatusCode::OK, "{body}");
            assert_eq!(body["turn"], i + 1);
            let text = body.to_string();
            assert!(!text.contains("react_llm") && !text.contains("baseline"), "system identity leaked: {text}");
        }
        let (status, body) = rate(&app, &id, round % 2 == 0, 4).await;
        assert_eq!((status, body), (StatusCode::OK, json!({ "ok": true })));
        let (status, body) = rate(&app, &id, true, 5).await;
        assert_eq!(status, StatusCode::CONFLICT);
        assert_eq!(body["error"], "already_rated");
        assert_eq!(say(&app, &id, "hello?").await.0, StatusCode::CONFLICT);
    }

    let (status, live) = call(&app, "GET", "/api/campaign/summary", None).await;
    assert_eq!(status, StatusCode::OK);
    let (_, again) = call(&app, "GET", "/api/campaign/summary", None).await;
    assert_eq!(live, again);
    let dialogues: u64 = live["systems"].as_array().unwrap().iter().map(|s| s["dialogues"].as_u64().unwrap()).sum();
    assert_eq!(dialogues, 4);

    let events = EventLog::read(&cfg.event_log).unwrap();
    assert_eq!(events.len(), 4 * 5);
    let replayed = Campaign::replay(Duration::hours(24), &events).unwrap().summary();
    assert_eq!(serde_json::to_value(replayed).unwrap(), live);
}

#[tokio::test]
async fn react_system_answers_police_request() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&react_only(dir.path()));
    let id = create(&app).await;
    let (status, body) = say(&app, &id, "I need the address of the police station please.").await;
    assert_eq!(status, StatusCode::OK);
    assert!(body["reply"].as_str().unwrap().contains("Parkside"), "{body}");
}

#[tokio::test]
async fn validation_and_lookup_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(&config(dir.path()));
    let id = create(&app).await;

    let (status, body) = rate(&app, &id, true, 4).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::CONFLICT, Some("no_turns")));
    let (status, body) = say(&app, &id, "   ").await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")));
    assert_eq!(say(&app, "nope", "hi").await.0, StatusCode::NOT_FOUND);
    assert_eq!(rate(&app, "nope", true, 3).await.0, StatusCode::NOT_FOUND);

    assert_eq!(say(&app, &id, "hello").await.0, StatusCode::OK);
    for bad in [0, 6] {
        let (status, body) = rate(&app, &id, true, bad).await;
        assert_eq!((status, body["error"].as_str()), (StatusCode::UNPROCESSABLE_ENTITY, Some("invalid")));
    }
    let (status, _) = call(&app, "POST", &format!("/api/session/{id}/message"), Some(json!({ "txt": "x" }))).await;
    assert!(status.is_client_error());
    assert_eq!(rate(&app, &id, false, 1).await.0, StatusCode::OK);
}

#[test]
fn assignment_is_balanced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { seed: Some(99), ..config(dir.path()) };
    let state = AppState::open(&cfg, Arc::new(Utc::now)).unwrap();
    let mut ids = std::collections::HashSet::new();
    for _ in 0..1000 {
        ids.insert(state.create_session().unwrap().session_id);
    }
    assert_eq!(ids.len(), 1000);
    let events = EventLog::read(&cfg.event_log).unwrap();
    let campaign = Campaign::replay(Duration::hours(24), &events).unwrap();
    let react = ids.iter().filter(|id| campaign.get(id).unwrap().system == SystemKind::ReactLlm).count();
    // 99% two-sided binomial bound around 500: ±2.576·√250 ≈ 41.
    assert!((459..=541).contains(&react), "{react} of 1000 assigned to the agent");
}

#[tokio::test]
async fn unloaded_database_is_not_ready() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ServiceConfig { db: Some(dir.path().join("missing.json")), ..config(dir.path()) };
    let app = app(&cfg);
    let (status, body) = call(&app, "POST", "/api/session", None).await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::SERVICE_UNAVAILABLE, Some("not_ready")));
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("not_ready")));
}

#[test]
fn idle_sessions_are_abandoned() {
    let dir = tempfile::tempdir().unwrap();
    let (clock, now) = fixed_clock();
    let state = AppState::open(&config(dir.path()), clock).unwrap();
    let id = state.create_session().unwrap().session_id;
    state.post_message(&id, "hello").unwrap();
    *now.lock().unwrap() += Duration::hours(25);
    assert!(state.post_message(&id, "still there?").is_err());
    assert!(state.submit_rating(&id, react_tod_service::Rating { success: true, satisfaction: 5 }).is_err());
    assert!(state.summary().systems.iter().all(|s| s.dialogues == 0));
}

#[tokio::test]
async fn sessions_survive_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = react_only(dir.path());
    let first = app(&cfg);
    let id = create(&first).await;
    assert_eq!(say(&first, &id, "I am looking for a police station.").await.0, StatusCode::OK);
    drop(first);

    let second = app(&cfg);
    let (status, body) = say(&second, &id, "Can you give me the phone number of the police station please?").await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(body["turn"], 2);
    assert!(body["reply"].as_str().unwrap().contains("01223358966"), "{body}");
    assert_eq!(rate(&second, &id, true, 5).await.0, StatusCode::OK);
}

struct Unavailable;

impl CompletionBackend for Unavailable {
    fn complete(&self, _: &CompletionRequest) -> Result<Completion, BackendError> {
        Err(BackendError::Fatal { attempts: 4, message: "server returned 503".into() })
    }
}

#[tokio::test]
async fn backend_failure_is_not_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = react_only(dir.path());
    let state = AppState::open_with(&cfg, Arc::new(Utc::now), Some(Arc::new(Unavailable))).unwrap();
    let app = router(state, None);
    let id = create(&app).await;
    let (status, body) = say(&app, &id, "hello").await;
    assert_eq!((status, body["error"].as_str()), (StatusCode::BAD_GATEWAY, Some("backend")));
    assert!(body["message"].as_str().unwrap().contains("send your message again"));
    assert_eq!(EventLog::read(&cfg.event_log).unwrap().len(), 1);
    assert_eq!(rate(&app, &id, true, 3).await.0, StatusCode::CONFLICT);
}

#[tokio::test]
async fn serves_static_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let web = dir.path().join("web");
    std::fs::create_dir(&web).unwrap();
    std::fs::write(web.join("index.html"), "<h1>evaluation</h1>").unwrap();
    let cfg = ServiceConfig { static_dir: Some(web), ..config(dir.path()) };
    let app = app(&cfg);
    let (status, body) = call(&app, "GET", "/index.html", None).await;
    assert_eq!((status, body), (StatusCode::OK, Value::String("<h1>evaluation</h1>".into())));
    let (status, body) = call(&app, "GET", "/api/health", None).await;
    assert_eq!((status, body["status"].as_str()), (StatusCode::OK, Some("ok")));
}
