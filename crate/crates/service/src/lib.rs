//! HTTP interface over a cspos project.

use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cspos_core::project::{AuthConfig, ItemAnswer, Principal, Project, ServiceError};
use cspos_core::{TaskKind, TokenId, UniversalTag};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tracing::error;

/// Milliseconds since the epoch, injectable for tests.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis() as i64)
    }
}

#[derive(Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start: i64) -> Self {
        ManualClock(AtomicI64::new(start))
    }

    pub fn advance(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Clone)]
pub struct AppState {
    project: Arc<Mutex<Project>>,
    auth: Arc<AuthConfig>,
    clock: Arc<dyn Clock>,
}

impl AppState {
    pub fn new(project: Project, auth: AuthConfig, clock: Arc<dyn Clock>) -> Self {
        AppState {
            project: Arc::new(Mutex::new(project)),
            auth: Arc::new(auth),
            clock,
        }
    }

    fn lock(&self) -> Result<MutexGuard<'_, Project>, ApiError> {
        self.project
            .lock()
            .map_err(|_| ApiError(ServiceError::Internal("project lock poisoned".into())))
    }

    pub fn digest(&self) -> (u64, String) {
        self.with_project(|p| (p.state().txn(), p.state().digest()))
    }

    /// Read access to the project outside a request.
    pub fn with_project<T>(&self, f: impl FnOnce(&Project) -> T) -> T {
        f(&self.project.lock().expect("lock"))
    }
}

pub struct ApiError(pub ServiceError);

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        ApiError(e)
    }
}

fn error_kind(e: &ServiceError) -> &'static str {
    match e {
        ServiceError::Forbidden(_) => "forbidden",
        ServiceError::NotFound(_) => "not_found",
        ServiceError::Conflict(_) => "conflict",
        ServiceError::Gone(_) => "gone",
        ServiceError::Unprocessable(_) => "unprocessable",
        ServiceError::BadRequest(_) => "bad_request",
        ServiceError::Internal(_) => "internal",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.status_code()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        if status.is_server_error() {
            error!("{}", self.0);
        }
        let body = json!({ "error": error_kind(&self.0), "message": self.0.message() });
        (status, Json(body)).into_response()
    }
}

struct Unauthorized;

impl IntoResponse for Unauthorized {
    fn into_response(self) -> Response {
        (
            StatusCode::UNAUTHORIZED,
            [(header::WWW_AUTHENTICATE, "Bearer")],
            Json(json!({ "error": "unauthorized", "message": "missing or unknown bearer token" })),
        )
            .into_response()
    }
}

enum Rejection {
    Auth(Unauthorized),
    Api(ApiError),
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        match self {
            Rejection::Auth(u) => u.into_response(),
            Rejection::Api(e) => e.into_response(),
        }
    }
}

impl From<ApiError> for Rejection {
    fn from(e: ApiError) -> Self {
        Rejection::Api(e)
    }
}

impl From<ServiceError> for Rejection {
    fn from(e: ServiceError) -> Self {
        Rejection::Api(ApiError(e))
    }
}

type ApiResult<T> = Result<T, Rejection>;

fn principal(state: &AppState, headers: &HeaderMap) -> Result<Principal, Rejection> {
    let token = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "))
        .map(str::trim)
        .ok_or(Rejection::Auth(Unauthorized))?;
    state
        .auth
        .tokens
        .get(token)
        .cloned()
        .ok_or(Rejection::Auth(Unauthorized))
}

fn forbidden(what: &str) -> Rejection {
    ServiceError::Forbidden(format!("{what} role required")).into()
}

/// Authenticates a worker, registering it on first sight.
fn worker(state: &AppState, headers: &HeaderMap, project: &mut Project) -> ApiResult<String> {
    match principal(state, headers)? {
        Principal::Worker {
            worker_id,
            locale,
            spanish_certified,
        } => {
            project.register(&worker_id, &locale, spanish_certified, state.clock.now_ms())?;
            Ok(worker_id)
        }
        _ => Err(forbidden("worker")),
    }
}

fn expert(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    match principal(state, headers)? {
        Principal::Expert { expert_id } => Ok(expert_id),
        _ => Err(forbidden("expert")),
    }
}

/// Experts and admins may read reports.
fn staff(state: &AppState, headers: &HeaderMap) -> ApiResult<()> {
    match principal(state, headers)? {
        Principal::Expert { .. } | Principal::Admin { .. } => Ok(()),
        Principal::Worker { .. } => Err(forbidden("expert or admin")),
    }
}

fn admin(state: &AppState, headers: &HeaderMap) -> ApiResult<String> {
    match principal(state, headers)? {
        Principal::Admin { admin_id } => Ok(admin_id),
        _ => Err(forbidden("admin")),
    }
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> ApiResult<T> {
    payload.map(|Json(v)| v).map_err(|e| {
        let msg = e.body_text();
        if e.status() == StatusCode::UNPROCESSABLE_ENTITY {
            ServiceError::Unprocessable(msg).into()
        } else {
            ServiceError::BadRequest(msg).into()
        }
    })
}

#[derive(Serialize)]
struct ScreeningResponse {
    status: String,
    questions: Vec<cspos_core::qc::ScreeningQuestionView>,
}

async fn get_screening(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<ScreeningResponse>> {
    let mut project = state.lock()?;
    let worker_id = worker(&state, &headers, &mut project)?;
    let status = project.state().worker(&worker_id).expect("registered").status;
    Ok(Json(ScreeningResponse {
        status: status.as_str().to_string(),
        questions: project.state().screening_view(),
    }))
}

#[derive(Deserialize)]
pub struct ScreeningAnswers {
    pub answers: Vec<usize>,
}

async fn post_screening(
    State(state): State<AppState>,
    headers: HeaderMap,
    payload: Result<Json<ScreeningAnswers>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let answers = body(payload)?;
    let mut project = state.lock()?;
    let worker_id = worker(&state, &headers, &mut project)?;
    let verdict = project.screening(&worker_id, &answers.answers, state.clock.now_ms())?;
    let status = project.state().worker(&worker_id).expect("registered").status;
    Ok(Json(json!({ "passed": verdict.passed, "status": status.as_str() })))
}

async fn next_page(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    let mut project = state.lock()?;
    let worker_id = worker(&state, &headers, &mut project)?;
    let view = project.next_page(&worker_id, state.clock.now_ms())?;
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
pub struct PageSubmission {
    pub answers: Vec<ItemAnswer>,
}

async fn submit_page(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(page_id): Path<String>,
    payload: Result<Json<PageSubmission>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let submission = body(payload)?;
    let mut project = state.lock()?;
    let worker_id = worker(&state, &headers, &mut project)?;
    let outcome = project.submit(&worker_id, &page_id, &submission.answers, state.clock.now_ms())?;
    Ok(Json(json!({
        "page_id": outcome.page_id,
        "recorded": outcome.recorded,
        "status": "accepted",
    })))
}

async fn list_ties(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    expert(&state, &headers)?;
    let project = state.lock()?;
    Ok(Json(project.state().ties_view()).into_response())
}

#[derive(Deserialize)]
pub struct TagChoice {
    pub tag: UniversalTag,
}

async fn resolve_tie(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(token_id): Path<String>,
    payload: Result<Json<TagChoice>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let expert_id = expert(&state, &headers)?;
    let choice = body(payload)?;
    let mut project = state.lock()?;
    let token_id = TokenId(token_id);
    let warnings_before = project.state().core().warnings.len();
    project.resolve_tie(&expert_id, &token_id, choice.tag, state.clock.now_ms())?;
    let warning = project.state().core().warnings.get(warnings_before).cloned();
    Ok(Json(json!({
        "token_id": token_id,
        "tag": choice.tag,
        "source": "expert",
        "warning": warning,
    })))
}

async fn list_manual(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    expert(&state, &headers)?;
    let project = state.lock()?;
    Ok(Json(project.state().manual_view()).into_response())
}

async fn tag_manual(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(token_id): Path<String>,
    payload: Result<Json<TagChoice>, JsonRejection>,
) -> ApiResult<Json<serde_json::Value>> {
    let expert_id = expert(&state, &headers)?;
    let choice = body(payload)?;
    let mut project = state.lock()?;
    let token_id = TokenId(token_id);
    project.manual_tag(&expert_id, &token_id, choice.tag, state.clock.now_ms())?;
    Ok(Json(json!({ "token_id": token_id, "tag": choice.tag, "source": "expert" })))
}

#[derive(Deserialize)]
pub struct ReportQuery {
    pub task: Option<String>,
}

pub fn parse_task(s: &str) -> Result<TaskKind, ServiceError> {
    TaskKind::ALL
        .into_iter()
        .find(|t| t.as_str() == s)
        .ok_or_else(|| ServiceError::BadRequest(format!("unknown task {s}; expected tsq, eng_qt or spa_qt")))
}

async fn reports(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ReportQuery>,
) -> ApiResult<Response> {
    staff(&state, &headers)?;
    let task = q.task.as_deref().map(parse_task).transpose()?;
    let project = state.lock()?;
    Ok(Json(project.state().report(task)).into_response())
}

async fn export(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    staff(&state, &headers)?;
    let project = state.lock()?;
    Ok((
        [(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")],
        project.state().export_tsv(),
    )
        .into_response())
}

#[derive(Deserialize)]
pub struct BanQuery {
    #[serde(default)]
    pub dry_run: bool,
}

async fn ban_worker(
    State(state): State<AppState>,
    headers: HeaderMap,
    Path(worker_id): Path<String>,
    Query(q): Query<BanQuery>,
) -> ApiResult<Response> {
    let admin_id = admin(&state, &headers)?;
    let mut project = state.lock()?;
    let preview = if q.dry_run {
        project.state().ban_preview(&worker_id)?
    } else {
        project.ban(&worker_id, &admin_id, state.clock.now_ms())?
    };
    Ok(Json(preview).into_response())
}

async fn workers(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Response> {
    admin(&state, &headers)?;
    let project = state.lock()?;
    let list: Vec<_> = project.state().workers().values().cloned().collect();
    Ok(Json(list).into_response())
}

async fn digest(State(state): State<AppState>, headers: HeaderMap) -> ApiResult<Json<serde_json::Value>> {
    admin(&state, &headers)?;
    let project = state.lock()?;
    Ok(Json(json!({ "txn": project.state().txn(), "digest": project.state().digest() })))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/api/screening", get(get_screening).post(post_screening))
        .route("/api/pages/next", get(next_page))
        .route("/api/pages/{id}", post(submit_page))
        .route("/api/expert/ties", get(list_ties))
        .route("/api/expert/ties/{token_id}", post(resolve_tie))
        .route("/api/expert/manual", get(list_manual))
        .route("/api/expert/manual/{token_id}", post(tag_manual))
        .route("/api/reports", get(reports))
        .route("/api/export", get(export))
        .route("/api/admin/workers", get(workers))
        .route("/api/admin/workers/{id}/ban", post(ban_worker))
        .route("/api/admin/digest", get(digest))
        .with_state(state)
}
