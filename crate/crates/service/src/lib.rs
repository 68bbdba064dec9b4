//! HTTP/JSON facade over teaching sessions and the knowledge base.
//!
//! Artifact references in `POST /sessions` are paths relative to the
//! artifacts directory the service was started with. Each session owns its
//! model copy and appends its event log to `sessions/<id>.jsonl` under that
//! directory. Requests for one session are serialized by a per-session lock;
//! sessions that reference the same knowledge-base directory share one
//! in-process knowledge base.

mod error;

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use mt_core::api::{ApiSessionHandle, DecideRequest, DecideResponse, Health, RecommendQuery};
use mt_core::artifacts::{open_kb_dir, SessionSpec};
use mt_core::augment::FeedbackRecord;
use mt_core::knowledge::{KnowledgeBase, ReplacementRecommendation};
use mt_core::session::{ErrorCurve, InteractionEvent, MachineStateView, Session, SessionReport, TeachStepResult};

pub use error::ApiError;

pub const SESSIONS_DIR: &str = "sessions";

struct SessionEntry {
    handle: ApiSessionHandle,
    session: Mutex<Session>,
}

pub struct AppState {
    artifacts: PathBuf,
    sessions: RwLock<HashMap<String, Arc<SessionEntry>>>,
    kbs: Mutex<HashMap<PathBuf, Arc<KnowledgeBase>>>,
}

type ApiResult<T> = Result<T, ApiError>;

impl AppState {
    pub fn new(artifacts: impl Into<PathBuf>) -> std::io::Result<Arc<AppState>> {
        let artifacts = artifacts.into();
        if !artifacts.is_dir() {
            return Err(std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!("artifacts directory {} does not exist", artifacts.display()),
            ));
        }
        Ok(Arc::new(AppState {
            artifacts,
            sessions: RwLock::new(HashMap::new()),
            kbs: Mutex::new(HashMap::new()),
        }))
    }

    pub fn artifacts(&self) -> &Path {
        &self.artifacts
    }

    pub fn log_path(&self, id: &str) -> PathBuf {
        self.artifacts.join(SESSIONS_DIR).join(format!("{id}.jsonl"))
    }

    fn entry(&self, id: &str) -> ApiResult<Arc<SessionEntry>> {
        self.sessions
            .read()
            .map_err(|_| ApiError::internal("session table lock poisoned"))?
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::unknown_session(id))
    }

    fn kb(&self, dir: &Path) -> mt_core::Result<Arc<KnowledgeBase>> {
        let mut kbs = self.kbs.lock().expect("kb cache lock");
        if let Some(kb) = kbs.get(dir) {
            return Ok(Arc::clone(kb));
        }
        let kb = Arc::new(open_kb_dir(dir)?);
        kbs.insert(dir.to_path_buf(), Arc::clone(&kb));
        Ok(kb)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_candidate))
        .route("/sessions/{id}/decide", post(decide))
        .route("/sessions/{id}/feedback", post(feedback))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/curve", get(curve))
        .route("/sessions/{id}/events", get(events))
        .route("/kb/recommend", get(recommend))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?
}

async fn with_session<T: Send + 'static>(
    state: &AppState,
    id: &str,
    f: impl FnOnce(&mut Session) -> mt_core::Result<T> + Send + 'static,
) -> ApiResult<T> {
    let entry = state.entry(id)?;
    blocking(move || {
        let mut s = entry
            .session
            .lock()
            .map_err(|_| ApiError::internal("session lock poisoned"))?;
        f(&mut s).map_err(ApiError::from)
    })
    .await
}

fn now_millis() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Artifact references must stay inside the artifacts directory.
fn check_relative(p: &Path) -> ApiResult<()> {
    let ok = !p.as_os_str().is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if ok {
        Ok(())
    } else {
        Err(ApiError::bad_request(format!(
            "artifact path `{}` must be relative to the artifacts directory",
            p.display()
        )))
    }
}

async fn healthz(State(state): State<Arc<AppState>>) -> ApiResult<Json<Health>> {
    let sessions = state
        .sessions
        .read()
        .map_err(|_| ApiError::internal("session table lock poisoned"))?
        .len();
    Ok(Json(Health {
        status: "ok".into(),
        sessions,
    }))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<SessionSpec>, JsonRejection>,
) -> ApiResult<(StatusCode, Json<ApiSessionHandle>)> {
    let Json(spec) = body?;
    for p in spec.paths() {
        check_relative(p)?;
    }
    let id = uuid::Uuid::new_v4().simple().to_string();
    let created_at = now_millis();
    let config = spec.clone();
    let st = Arc::clone(&state);
    let session = blocking(move || {
        let resolved = spec.rebased(&st.artifacts);
        let kb = st.kb(&resolved.kb)?;
        let init = resolved.load(kb)?;
        let session = Session::new(id.clone(), init)?;
        let dir = st.artifacts.join(SESSIONS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| ApiError::internal(format!("{}: {e}", dir.display())))?;
        Ok(session.with_log_file(st.log_path(&id)))
    })
    .await?;
    let handle = ApiSessionHandle {
        id: session.id().to_string(),
        created_at,
        config,
        intents: session.model().inventory().labels().to_vec(),
    };
    log::info!("session {} created", handle.id);
    let entry = Arc::new(SessionEntry {
        handle: handle.clone(),
        session: Mutex::new(session),
    });
    state
        .sessions
        .write()
        .map_err(|_| ApiError::internal("session table lock poisoned"))?
        .insert(handle.id.clone(), entry);
    Ok((StatusCode::CREATED, Json(handle)))
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<ApiSessionHandle>> {
    Ok(Json(state.entry(&id)?.handle.clone()))
}

async fn next_candidate(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<MachineStateView>> {
    with_session(&state, &id, |s| s.next_candidate()).await.map(Json)
}

async fn decide(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<DecideRequest>, JsonRejection>,
) -> ApiResult<Json<DecideResponse>> {
    let Json(req) = body?;
    with_session(&state, &id, move |s| {
        s.decide(&req.example_id, req.action)?;
        Ok(DecideResponse {
            phase: s.phase().clone(),
            sim_seconds: s.clock(),
        })
    })
    .await
    .map(Json)
}

async fn feedback(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    body: Result<Json<FeedbackRecord>, JsonRejection>,
) -> ApiResult<Json<TeachStepResult>> {
    let Json(fb) = body?;
    with_session(&state, &id, move |s| s.submit_feedback(fb)).await.map(Json)
}

async fn report(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<SessionReport>> {
    with_session(&state, &id, |s| Ok(s.report())).await.map(Json)
}

async fn curve(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult<Json<ErrorCurve>> {
    with_session(&state, &id, |s| Ok(s.curve().clone())).await.map(Json)
}

async fn events(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> ApiResult<Json<Vec<InteractionEvent>>> {
    with_session(&state, &id, |s| Ok(s.log().to_vec())).await.map(Json)
}

async fn recommend(
    State(state): State<Arc<AppState>>,
    query: Result<Query<RecommendQuery>, QueryRejection>,
) -> ApiResult<Json<Vec<ReplacementRecommendation>>> {
    let Query(q) = query?;
    let entry = state.entry(&q.session)?;
    blocking(move || {
        let (kb, sentence) = {
            let s = entry
                .session
                .lock()
                .map_err(|_| ApiError::internal("session lock poisoned"))?;
            let ex = s.pool_example(&q.example).ok_or_else(|| {
                ApiError::new(
                    StatusCode::NOT_FOUND,
                    "unknown_example",
                    format!("no example `{}` in the pool of session `{}`", q.example, q.session),
                )
            })?;
            (Arc::clone(s.kb()), ex.sentence.clone())
        };
        Ok(kb.recommend(&q.word, &sentence, q.position)?)
    })
    .await
    .map(Json)
}
