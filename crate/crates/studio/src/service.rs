//! HTTP API over the engine.
//!
//! Every mutation works on a clone of the session under the session's lock;
//! the clone is persisted and swapped in only on success, so a failed request
//! leaves the stored session untouched.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex, RwLock};
use std::time::{Duration, Instant};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use dramaturg_core::gateway::GatewayError;
use dramaturg_core::metrics::{session_report, EditReport};
use dramaturg_core::prompt::PromptError;
use dramaturg_core::script::{
    assemble_partial, assemble_script, export_plaintext, load_session, save_session, ScriptError,
    SESSION_EXTENSION,
};
use dramaturg_core::story::{resolve_slot_text, Candidate, GenerationSlot, StoryError};
use dramaturg_core::{Engine, EngineError, FullRunReport, SeedPolicy, SlotAddress, StorySession};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::{Mutex, OwnedSemaphorePermit, Semaphore};
use uuid::Uuid;

use crate::config::ServiceConfig;

/// Error payload returned with every non-2xx status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    /// The slot the error is about, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<String>,
    /// Unfilled slots, for incomplete exports.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub missing: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: StatusCode,
    pub body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                error: error.into(),
                message: message.into(),
                slot: None,
                missing: Vec::new(),
            },
        }
    }

    fn with_slot(mut self, slot: impl Into<String>) -> Self {
        self.body.slot = Some(slot.into());
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "invalid_input", message)
    }

    fn unknown_session(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))
    }

    fn busy() -> Self {
        Self::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "busy",
            "too many generations in flight; retry later",
        )
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let tagged = match &e {
            EngineError::Slot { address, .. } => Some(address.clone()),
            _ => None,
        };
        let message = e.to_string();
        let mut api = match e.root().clone() {
            EngineError::InvalidLogLine(_) => ApiError::new(StatusCode::BAD_REQUEST, "invalid_log_line", message),
            EngineError::UpstreamMissing(slot) => {
                ApiError::new(StatusCode::CONFLICT, "upstream_missing", message).with_slot(slot)
            }
            EngineError::UpstreamUnparseable(slot) => {
                ApiError::new(StatusCode::CONFLICT, "upstream_unparseable", message).with_slot(slot)
            }
            EngineError::EmptySlot(slot) => {
                ApiError::new(StatusCode::CONFLICT, "empty_slot", message).with_slot(slot.to_string())
            }
            EngineError::UnknownSlot(slot) => {
                ApiError::new(StatusCode::NOT_FOUND, "unknown_slot", message).with_slot(slot)
            }
            EngineError::UnparseableEdit(_) => {
                ApiError::new(StatusCode::BAD_REQUEST, "unparseable_edit", message)
            }
            EngineError::LoopUnresolved { address, .. } => {
                ApiError::new(StatusCode::BAD_GATEWAY, "loop_unresolved", message)
                    .with_slot(address.to_string())
            }
            EngineError::Gateway(g) => match g {
                GatewayError::BackendUnavailable { .. } | GatewayError::BackendRejected { .. } => {
                    ApiError::new(StatusCode::BAD_GATEWAY, "backend_failure", message)
                }
                GatewayError::ContextOverflow { .. } | GatewayError::EmptyPrompt => {
                    ApiError::new(StatusCode::BAD_REQUEST, "prompt_rejected", message)
                }
                GatewayError::InvalidConfig(_) => ApiError::internal(message),
            },
            EngineError::Prompt(p) => match p {
                PromptError::UnknownSet(_) => {
                    ApiError::new(StatusCode::BAD_REQUEST, "unknown_prompt_set", message)
                }
                PromptError::InvalidLogLine(_)
                | PromptError::ReservedToken(_)
                | PromptError::EmptyLocationName => ApiError::bad_request(message),
                PromptError::EmptyCharacterList => {
                    ApiError::new(StatusCode::CONFLICT, "upstream_unparseable", message)
                        .with_slot(SlotAddress::Characters.to_string())
                }
                _ => ApiError::internal(message),
            },
            EngineError::Story(s) => match s {
                StoryError::CandidateOutOfRange { .. }
                | StoryError::InvalidCharacter(_)
                | StoryError::InvalidScene(_) => ApiError::bad_request(message),
                _ => ApiError::internal(message),
            },
            EngineError::Slot { .. } => unreachable!("root() strips slot tags"),
        };
        if api.body.slot.is_none() {
            api.body.slot = tagged;
        }
        api
    }
}

impl From<ScriptError> for ApiError {
    fn from(e: ScriptError) -> Self {
        let message = e.to_string();
        match e {
            ScriptError::IncompleteSession(missing) => {
                let mut api = ApiError::new(StatusCode::CONFLICT, "incomplete_session", message);
                api.body.missing = missing;
                api
            }
            _ => ApiError::internal(message),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobView {
    pub id: Uuid,
    pub session_id: Uuid,
    pub status: JobStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<FullRunReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

struct JobRecord {
    view: JobView,
    finished: Option<Instant>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub id: Uuid,
    pub log_line: String,
    pub prompt_set: String,
    pub title: Option<String>,
    pub scenes: usize,
    pub history_len: usize,
}

impl SessionSummary {
    fn of(s: &StorySession) -> Self {
        Self {
            id: s.id,
            log_line: s.log_line.to_string(),
            prompt_set: s.prompt_set_name.clone(),
            title: resolve_slot_text(&s.title_slot).ok().map(|t| t.trim().to_string()),
            scenes: s.dialogue_slots.len(),
            history_len: s.history.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateResponse {
    pub address: SlotAddress,
    pub candidate_index: usize,
    pub candidate: Candidate,
    pub slot: GenerationSlot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: Uuid,
}

#[derive(Debug, Deserialize)]
struct CreateBody {
    log_line: String,
    prompt_set: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SeedBody {
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct EditBody {
    text: String,
}

#[derive(Debug, Deserialize)]
struct AcceptBody {
    candidate_index: usize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FullBody {
    #[serde(default)]
    seed_policy: SeedPolicy,
}

#[derive(Debug, Default, Deserialize)]
struct ExportQuery {
    #[serde(default)]
    strict: bool,
}

type SessionHandle = Arc<Mutex<StorySession>>;

pub struct AppState {
    engine: Arc<Engine>,
    sessions: RwLock<HashMap<Uuid, SessionHandle>>,
    jobs: StdMutex<HashMap<Uuid, JobRecord>>,
    permits: Arc<Semaphore>,
    store: Option<PathBuf>,
    auth_token: Option<String>,
    job_ttl: Duration,
}

impl AppState {
    /// Builds the state and loads every session file already in the
    /// configured session directory.
    pub fn new(engine: Engine, config: &ServiceConfig) -> Result<Self, ScriptError> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &config.session_dir {
            std::fs::create_dir_all(dir)?;
            for entry in std::fs::read_dir(dir)? {
                let path = entry?.path();
                let is_session = path
                    .file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.ends_with(&format!(".{SESSION_EXTENSION}")));
                if is_session {
                    let session = load_session(&path)?;
                    sessions.insert(session.id, Arc::new(Mutex::new(session)));
                }
            }
            tracing::info!(dir = %dir.display(), count = sessions.len(), "loaded sessions");
        }
        Ok(Self {
            engine: Arc::new(engine),
            sessions: RwLock::new(sessions),
            jobs: StdMutex::new(HashMap::new()),
            permits: Arc::new(Semaphore::new(config.max_concurrent)),
            store: config.session_dir.clone(),
            auth_token: config.auth_token.clone(),
            job_ttl: config.job_ttl,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        let uuid = Uuid::parse_str(id).map_err(|_| ApiError::unknown_session(id))?;
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(&uuid)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    fn session_path(dir: &Path, id: Uuid) -> PathBuf {
        dir.join(format!("{id}.{SESSION_EXTENSION}"))
    }

    fn persist(&self, session: &StorySession) -> Result<(), ApiError> {
        if let Some(dir) = &self.store {
            save_session(session, Self::session_path(dir, session.id))
                .map_err(|e| ApiError::internal(format!("cannot save session: {e}")))?;
        }
        Ok(())
    }

    fn permit(&self) -> Result<OwnedSemaphorePermit, ApiError> {
        self.permits.clone().try_acquire_owned().map_err(|_| ApiError::busy())
    }

    fn update_job(&self, id: Uuid, f: impl FnOnce(&mut JobRecord)) {
        if let Some(job) = self.jobs.lock().expect("job map poisoned").get_mut(&id) {
            f(job);
        }
    }

    fn insert_job(&self, view: JobView) {
        let mut jobs = self.jobs.lock().expect("job map poisoned");
        let ttl = self.job_ttl;
        jobs.retain(|_, j| j.finished.is_none_or(|t| t.elapsed() < ttl));
        jobs.insert(view.id, JobRecord { view, finished: None });
    }
}

fn parse_body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid request body: {e}")))
}

fn parse_optional_body<T: DeserializeOwned + Default>(bytes: &Bytes) -> Result<T, ApiError> {
    if bytes.iter().all(u8::is_ascii_whitespace) {
        Ok(T::default())
    } else {
        parse_body(bytes)
    }
}

fn parse_address(raw: &str) -> Result<SlotAddress, ApiError> {
    raw.parse().map_err(|_| {
        ApiError::new(StatusCode::NOT_FOUND, "unknown_slot", format!("no such slot: {raw}")).with_slot(raw)
    })
}

async fn require_auth(
    State(state): State<Arc<AppState>>,
    request: Request,
    next: Next,
) -> Response {
    if let Some(token) = &state.auth_token {
        let expected = format!("Bearer {token}");
        let given = request
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok());
        if given != Some(expected.as_str()) {
            return ApiError::new(StatusCode::UNAUTHORIZED, "unauthorized", "missing or wrong bearer token")
                .into_response();
        }
    }
    next.run(request).await
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/prompt_sets", get(prompt_sets))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/slots/{address}/generate", post(generate))
        .route("/sessions/{id}/slots/{address}/continue", post(continue_slot))
        .route("/sessions/{id}/slots/{address}/edit", put(edit))
        .route("/sessions/{id}/slots/{address}/accept", put(accept))
        .route("/sessions/{id}/generate_full", post(generate_full))
        .route("/sessions/{id}/metrics", get(metrics))
        .route("/sessions/{id}/export", get(export))
        .route("/jobs/{id}", get(job))
        .layer(middleware::from_fn_with_state(state.clone(), require_auth))
        .with_state(state)
}

async fn prompt_sets(State(state): State<Arc<AppState>>) -> Json<Vec<String>> {
    Json(state.engine.prompts().names())
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Bytes,
) -> Result<(StatusCode, Json<SessionSummary>), ApiError> {
    let body: CreateBody = parse_body(&body)?;
    let session = state.engine.new_session(&body.log_line, &body.prompt_set)?;
    state.persist(&session)?;
    let summary = SessionSummary::of(&session);
    state
        .sessions
        .write()
        .expect("session map poisoned")
        .insert(session.id, Arc::new(Mutex::new(session)));
    tracing::info!(id = %summary.id, "session created");
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_sessions(State(state): State<Arc<AppState>>) -> Json<Vec<SessionSummary>> {
    let handles: Vec<SessionHandle> = state
        .sessions
        .read()
        .expect("session map poisoned")
        .values()
        .cloned()
        .collect();
    let mut out = Vec::with_capacity(handles.len());
    for handle in handles {
        out.push(SessionSummary::of(&*handle.lock().await));
    }
    out.sort_by_key(|s| s.id);
    Json(out)
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<StorySession>, ApiError> {
    let handle = state.session(&id)?;
    let session = handle.lock().await.clone();
    Ok(Json(session))
}

fn slot_of(session: &StorySession, address: &SlotAddress) -> Result<GenerationSlot, ApiError> {
    session
        .slot(address)
        .cloned()
        .ok_or_else(|| EngineError::UnknownSlot(address.to_string()).into())
}

async fn run_generation(
    state: Arc<AppState>,
    id: String,
    raw_address: String,
    body: Bytes,
    continuing: bool,
) -> Result<(StatusCode, Json<CandidateResponse>), ApiError> {
    let address = parse_address(&raw_address)?;
    let body: SeedBody = parse_optional_body(&body)?;
    let handle = state.session(&id)?;
    let _permit = state.permit()?;
    let mut guard = handle.lock().await;
    let mut work = guard.clone();
    let outcome = if continuing {
        state.engine.continue_generation(&mut work, &address, body.seed).await
    } else {
        let seed = match body.seed {
            Some(seed) => seed,
            // A slot that does not exist yet is left for the engine to report.
            None => work.slot(&address).map_or(1, |s| s.candidates.len() as u64 + 1),
        };
        state.engine.generate(&mut work, &address, seed).await
    };
    let candidate = match outcome {
        Ok(c) => c,
        // The looping candidate is kept and flagged in its loop report.
        Err(EngineError::LoopUnresolved { candidate, .. }) => *candidate,
        Err(e) => return Err(e.into()),
    };
    state.persist(&work)?;
    let slot = slot_of(&work, &address)?;
    *guard = work;
    Ok((
        StatusCode::CREATED,
        Json(CandidateResponse {
            address,
            candidate_index: slot.candidates.len() - 1,
            candidate,
            slot,
        }),
    ))
}

async fn generate(
    State(state): State<Arc<AppState>>,
    UrlPath((id, address)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<(StatusCode, Json<CandidateResponse>), ApiError> {
    run_generation(state, id, address, body, false).await
}

async fn continue_slot(
    State(state): State<Arc<AppState>>,
    UrlPath((id, address)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<(StatusCode, Json<CandidateResponse>), ApiError> {
    run_generation(state, id, address, body, true).await
}

async fn mutate_slot(
    state: &AppState,
    id: &str,
    address: &SlotAddress,
    f: impl FnOnce(&Engine, &mut StorySession) -> Result<(), EngineError>,
) -> Result<Json<GenerationSlot>, ApiError> {
    let handle = state.session(id)?;
    let mut guard = handle.lock().await;
    let mut work = guard.clone();
    f(&state.engine, &mut work)?;
    state.persist(&work)?;
    let slot = slot_of(&work, address)?;
    *guard = work;
    Ok(Json(slot))
}

async fn edit(
    State(state): State<Arc<AppState>>,
    UrlPath((id, address)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<Json<GenerationSlot>, ApiError> {
    let address = parse_address(&address)?;
    let body: EditBody = parse_body(&body)?;
    mutate_slot(&state, &id, &address, |engine, s| engine.apply_edit(s, &address, &body.text)).await
}

async fn accept(
    State(state): State<Arc<AppState>>,
    UrlPath((id, address)): UrlPath<(String, String)>,
    body: Bytes,
) -> Result<Json<GenerationSlot>, ApiError> {
    let address = parse_address(&address)?;
    let body: AcceptBody = parse_body(&body)?;
    mutate_slot(&state, &id, &address, |engine, s| {
        engine.accept(s, &address, body.candidate_index)
    })
    .await
}

async fn generate_full(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<(StatusCode, Json<JobAccepted>), ApiError> {
    let body: FullBody = parse_optional_body(&body)?;
    let handle = state.session(&id)?;
    let permit = state.permit()?;
    let job_id = Uuid::new_v4();
    let session_id = handle.lock().await.id;
    state.insert_job(JobView {
        id: job_id,
        session_id,
        status: JobStatus::Queued,
        report: None,
        error: None,
    });
    let task_state = state.clone();
    tokio::spawn(async move {
        let _permit = permit;
        let mut guard = handle.lock().await;
        task_state.update_job(job_id, |j| j.view.status = JobStatus::Running);
        let mut work = guard.clone();
        let result = task_state.engine.generate_full(&mut work, body.seed_policy).await;
        // Slots finished before a failure are kept, as in a direct engine run.
        let saved = task_state.persist(&work);
        if saved.is_ok() {
            *guard = work;
        }
        drop(guard);
        let (status, report, error) = match (result, saved) {
            (Ok(report), Ok(())) => (JobStatus::Succeeded, Some(report), None),
            (_, Err(e)) => (JobStatus::Failed, None, Some(e.body)),
            (Err(e), Ok(())) => (JobStatus::Failed, None, Some(ApiError::from(e).body)),
        };
        tracing::info!(job = %job_id, ?status, "full run finished");
        task_state.update_job(job_id, |j| {
            j.view.status = status;
            j.view.report = report;
            j.view.error = error;
            j.finished = Some(Instant::now());
        });
    });
    Ok((StatusCode::ACCEPTED, Json(JobAccepted { job_id })))
}

async fn job(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<JobView>, ApiError> {
    let not_found = || ApiError::new(StatusCode::NOT_FOUND, "unknown_job", format!("no job {id}"));
    let uuid = Uuid::parse_str(&id).map_err(|_| not_found())?;
    state
        .jobs
        .lock()
        .expect("job map poisoned")
        .get(&uuid)
        .map(|j| Json(j.view.clone()))
        .ok_or_else(not_found)
}

async fn metrics(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<Vec<EditReport>>, ApiError> {
    let handle = state.session(&id)?;
    let report = session_report(&*handle.lock().await);
    Ok(Json(report))
}

/// Plain-text script. Unfilled slots are skipped and listed in the
/// `x-missing-slots` header; `?strict=true` refuses incomplete sessions.
async fn export(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(query): Query<ExportQuery>,
) -> Result<Response, ApiError> {
    let handle = state.session(&id)?;
    let session = handle.lock().await;
    let doc = if query.strict {
        assemble_script(&session)?
    } else {
        assemble_partial(&session)
    };
    drop(session);
    let mut headers = HeaderMap::new();
    headers.insert(
        header::CONTENT_TYPE,
        HeaderValue::from_static("text/plain; charset=utf-8"),
    );
    if !doc.missing.is_empty() {
        let missing: Vec<String> = doc.missing.iter().map(ToString::to_string).collect();
        if let Ok(value) = HeaderValue::from_str(&missing.join(",")) {
            headers.insert("x-missing-slots", value);
        }
    }
    Ok((StatusCode::OK, headers, export_plaintext(&doc)).into_response())
}

/// Runs the service until ctrl-c.
pub async fn serve(config: ServiceConfig) -> anyhow::Result<()> {
    let built = config.engine.build()?;
    let state = Arc::new(AppState::new(built.engine, &config)?);
    let listener = tokio::net::TcpListener::bind(&config.bind).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
