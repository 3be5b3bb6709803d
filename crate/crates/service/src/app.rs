//! HTTP handlers and the shared service state.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use react_tod::db::DomainDatabase;
use react_tod::engine::{EngineConfig, ExemplarMode, Session};
use react_tod::llm::{CompletionBackend, HttpBackend, HttpConfig, ScriptedBackend};
use react_tod::rules::{BaselineResponder, RuleBackend};
use react_tod::sim::generate_goal;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;
use tower_http::services::ServeDir;
use tracing::{error, info};

use crate::config::{BackendSettings, ServiceConfig};
use crate::store::{Campaign, CampaignSummary, EvalSession, Event, EventLog, Rating, StoreError, SystemKind, TranscriptTurn};

pub const INSTRUCTIONS: &str = "Chat with the system to achieve the goal above: ask for the information it lists and \
make any bookings it mentions. Say goodbye when you are done, then rate the conversation: tick success only if every \
part of the goal was achieved, and give your overall satisfaction from 1 (very poor) to 5 (excellent).";

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("{0}")]
    Store(#[from] StoreError),
    #[error("the system could not answer ({0}); please send your message again")]
    Backend(String),
    #[error("the service is not ready: {0}")]
    NotReady(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl ApiError {
    fn status_and_code(&self) -> (StatusCode, &'static str) {
        match self {
            ApiError::Store(e) => match e {
                StoreError::UnknownSession(_) => (StatusCode::NOT_FOUND, "unknown_session"),
                StoreError::AlreadyRated(_) => (StatusCode::CONFLICT, "already_rated"),
                StoreError::Abandoned(_) => (StatusCode::CONFLICT, "abandoned"),
                StoreError::Duplicate(_) => (StatusCode::CONFLICT, "duplicate"),
                StoreError::EmptyTranscript(_) => (StatusCode::CONFLICT, "no_turns"),
                StoreError::Invalid(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid"),
                StoreError::Io { .. } | StoreError::Corrupt { .. } => (StatusCode::INTERNAL_SERVER_ERROR, "storage"),
            },
            ApiError::Backend(_) => (StatusCode::BAD_GATEWAY, "backend"),
            ApiError::NotReady(_) => (StatusCode::SERVICE_UNAVAILABLE, "not_ready"),
            ApiError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, "internal"),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code) = self.status_and_code();
        if status.is_server_error() {
            error!(%self, "request failed");
        }
        (status, Json(json!({ "error": code, "message": self.to_string() }))).into_response()
    }
}

enum Responder {
    React(Box<Session>),
    Baseline(BaselineResponder),
}

struct Inner {
    db: Option<Arc<DomainDatabase>>,
    not_ready: Option<String>,
    backend: Option<Arc<dyn CompletionBackend>>,
    model: String,
    baseline: bool,
    campaign: RwLock<Campaign>,
    log: EventLog,
    responders: Mutex<HashMap<String, Arc<Mutex<Responder>>>>,
    rng: Mutex<ChaCha8Rng>,
    clock: Clock,
}

#[derive(Clone)]
pub struct AppState(Arc<Inner>);

impl AppState {
    /// Loads the database, opens the event log and rebuilds the campaign
    /// from it. A database or backend that fails to load leaves the service
    /// up but not ready.
    pub fn open(config: &ServiceConfig, clock: Clock) -> Result<Self, StoreError> {
        Self::open_with(config, clock, None)
    }

    /// As [`open`](Self::open), with `backend` replacing the configured one.
    pub fn open_with(
        config: &ServiceConfig,
        clock: Clock,
        backend: Option<Arc<dyn CompletionBackend>>,
    ) -> Result<Self, StoreError> {
        let (log, events) = EventLog::open(&config.event_log)?;
        let campaign = Campaign::replay(Duration::hours(config.abandon_after_hours), &events)?;
        let mut not_ready = None;
        let db = match &config.db {
            Some(path) => match DomainDatabase::load(path) {
                Ok(db) => Some(Arc::new(db)),
                Err(e) => {
                    not_ready = Some(format!("database {}: {e}", path.display()));
                    None
                }
            },
            None => Some(Arc::new(DomainDatabase::bundled())),
        };
        let model = match &config.backend {
            BackendSettings::Scripted => "scripted".to_string(),
            BackendSettings::Http { model } => model.clone(),
        };
        let backend: Option<Arc<dyn CompletionBackend>> = match (backend, &config.backend, &db) {
            (_, _, None) => None,
            (Some(b), _, Some(_)) => Some(b),
            (None, BackendSettings::Scripted, Some(db)) => Some(Arc::new(RuleBackend::new(db.clone()))),
            (None, BackendSettings::Http { .. }, Some(_)) => match HttpConfig::from_env().and_then(HttpBackend::new) {
                Ok(b) => Some(Arc::new(b)),
                Err(e) => {
                    not_ready = Some(format!("backend: {e}"));
                    None
                }
            },
        };
        let rng = match config.seed {
            Some(seed) => ChaCha8Rng::seed_from_u64(seed),
            None => ChaCha8Rng::from_entropy(),
        };
        info!(sessions = campaign.len(), events = events.len(), "campaign restored");
        Ok(AppState(Arc::new(Inner {
            db,
            not_ready,
            backend,
            model,
            baseline: config.baseline,
            campaign: RwLock::new(campaign),
            log,
            responders: Mutex::new(HashMap::new()),
            rng: Mutex::new(rng),
            clock,
        })))
    }

    pub fn summary(&self) -> CampaignSummary {
        self.0.campaign.read().expect("campaign lock").summary()
    }

    fn ready(&self) -> Result<(Arc<DomainDatabase>, Arc<dyn CompletionBackend>), ApiError> {
        match (&self.0.db, &self.0.backend) {
            (Some(db), Some(b)) => Ok((db.clone(), b.clone())),
            _ => Err(ApiError::NotReady(self.0.not_ready.clone().unwrap_or_default())),
        }
    }

    fn record(&self, event: Event) -> Result<(), ApiError> {
        let mut campaign = self.0.campaign.write().expect("campaign lock");
        campaign.check(&event)?;
        self.0.log.append(&event)?;
        campaign.apply(&event)?;
        Ok(())
    }

    fn engine_config(&self) -> EngineConfig {
        EngineConfig { model: self.0.model.clone(), ..EngineConfig::default() }
    }

    /// A fresh responder brought up to the session's transcript. Agent
    /// turns are replayed from their recorded completions.
    fn build_responder(&self, session: &EvalSession, db: Arc<DomainDatabase>) -> Result<Responder, ApiError> {
        match session.system {
            SystemKind::Baseline => {
                let mut b = BaselineResponder::new(db);
                for turn in &session.transcript {
                    b.respond(&turn.user);
                }
                Ok(Responder::Baseline(b))
            }
            SystemKind::ReactLlm => {
                let domains = session.goal.domain_names();
                let mut s = Session::with_mode(db, ExemplarMode::Generic, Some(&domains), self.engine_config());
                for turn in &session.transcript {
                    let outputs = turn.trace.as_ref().map(|t| t.raw_outputs.clone()).unwrap_or_default();
                    s.run_turn(&turn.user, &ScriptedBackend::new(outputs))
                        .map_err(|e| ApiError::Internal(format!("rebuilding session {}: {e}", session.id)))?;
                }
                Ok(Responder::React(Box::new(s)))
            }
        }
    }

    fn responder(&self, id: &str, db: Arc<DomainDatabase>) -> Result<Arc<Mutex<Responder>>, ApiError> {
        if let Some(r) = self.0.responders.lock().expect("responders lock").get(id) {
            return Ok(r.clone());
        }
        let session = self
            .0
            .campaign
            .read()
            .expect("campaign lock")
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        let built = Arc::new(Mutex::new(self.build_responder(&session, db)?));
        Ok(self.0.responders.lock().expect("responders lock").entry(id.to_string()).or_insert(built).clone())
    }

    pub fn create_session(&self) -> Result<SessionCreated, ApiError> {
        let (db, _) = self.ready()?;
        let (seed, system) = {
            let mut rng = self.0.rng.lock().expect("rng lock");
            let seed: u64 = rng.gen();
            let baseline = self.0.baseline && rng.gen_bool(0.5);
            (seed, if baseline { SystemKind::Baseline } else { SystemKind::ReactLlm })
        };
        let goal = generate_goal(&db, seed);
        let goal_text = goal.describe();
        let id = uuid::Uuid::new_v4().simple().to_string();
        self.record(Event::SessionCreated { id: id.clone(), system, goal, goal_text: goal_text.clone(), at: (self.0.clock)() })?;
        info!(session = %id, "session created");
        Ok(SessionCreated { session_id: id, goal_text, instructions: INSTRUCTIONS.into() })
    }

    /// Runs one exchange. Blocking: the agent may call a remote model.
    pub fn post_message(&self, id: &str, text: &str) -> Result<MessageReply, ApiError> {
        if text.trim().is_empty() {
            return Err(StoreError::Invalid("message text is empty".into()).into());
        }
        let (db, backend) = self.ready()?;
        self.0.campaign.read().expect("campaign lock").open_session(id, (self.0.clock)())?;
        let responder = self.responder(id, db)?;
        // Messages of one session are handled one at a time.
        let mut responder = responder.lock().expect("responder lock");
        self.0.campaign.read().expect("campaign lock").open_session(id, (self.0.clock)())?;
        let (reply, trace, rollback) = match &mut *responder {
            Responder::Baseline(b) => {
                let before = b.clone();
                let reply = b.respond(text);
                (reply, None, Some(before))
            }
            Responder::React(s) => {
                let result = s.run_turn(text, backend.as_ref()).map_err(|e| ApiError::Backend(e.to_string()))?;
                (result.answer, Some(result.trace), None)
            }
        };
        let turn = TranscriptTurn { user: text.to_string(), reply: reply.clone(), trace };
        if let Err(e) = self.record(Event::Message { id: id.to_string(), turn, at: (self.0.clock)() }) {
            // Keep the responder in step with the stored transcript.
            match (rollback, &mut *responder) {
                (Some(before), Responder::Baseline(b)) => *b = before,
                _ => {
                    drop(responder);
                    self.0.responders.lock().expect("responders lock").remove(id);
                }
            }
            return Err(e);
        }
        let turn = self.0.campaign.read().expect("campaign lock").get(id).map_or(0, |s| s.transcript.len());
        Ok(MessageReply { reply, turn })
    }

    pub fn submit_rating(&self, id: &str, rating: Rating) -> Result<(), ApiError> {
        rating.validate()?;
        self.record(Event::Rated { id: id.to_string(), rating, at: (self.0.clock)() })?;
        self.0.responders.lock().expect("responders lock").remove(id);
        Ok(())
    }

    pub fn health(&self) -> Health {
        Health {
            status: if self.0.not_ready.is_none() { "ok" } else { "not_ready" },
            detail: self.0.not_ready.clone(),
            sessions: self.0.campaign.read().expect("campaign lock").len(),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub goal_text: String,
    pub instructions: String,
}

#[derive(Debug, Deserialize)]
pub struct MessageRequest {
    pub text: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct MessageReply {
    pub reply: String,
    pub turn: usize,
}

#[derive(Debug, Serialize)]
pub struct Health {
    pub status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub sessions: usize,
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f).await.map_err(|e| ApiError::Internal(e.to_string()))?
}

async fn create_session(State(state): State<AppState>) -> Result<(StatusCode, Json<SessionCreated>), ApiError> {
    let created = blocking(move || state.create_session()).await?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn post_message(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<MessageRequest>,
) -> Result<Json<MessageReply>, ApiError> {
    blocking(move || state.post_message(&id, &body.text)).await.map(Json)
}

async fn submit_rating(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(rating): Json<Rating>,
) -> Result<Json<serde_json::Value>, ApiError> {
    blocking(move || state.submit_rating(&id, rating)).await?;
    Ok(Json(json!({ "ok": true })))
}

async fn summary(State(state): State<AppState>) -> Json<CampaignSummary> {
    Json(state.summary())
}

async fn health(State(state): State<AppState>) -> Json<Health> {
    Json(state.health())
}

pub fn router(state: AppState, static_dir: Option<&std::path::Path>) -> Router {
    let api = Router::new()
        .route("/api/session", post(create_session))
        .route("/api/session/:id/message", post(post_message))
        .route("/api/session/:id/rating", post(submit_rating))
        .route("/api/campaign/summary", get(summary))
        .route("/api/health", get(health))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
