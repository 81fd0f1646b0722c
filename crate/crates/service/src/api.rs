//! JSON-over-HTTP API around the edit engine.

use std::collections::HashMap;
use std::future::Future;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::sync::Semaphore;
use topoedit::diffusion::{Denoiser, VelocityModel};
use topoedit::edit::{select_best, Candidate, CandidateSet, EditConfig, EditRequest, Editor};
use topoedit::eval::corpus::CorpusItem;
use topoedit::fem::{compliance, refine};
use topoedit::io::{grid_hash, grid_to_pgm, load_json};
use topoedit::morphology::skeletonize;
use topoedit::{DensityField, ProblemSpec};

use crate::store::{valid_id, EditJob, HistoryEntry, JobError, JobStatus, Session, StoredResponse, Store};

pub const SCHEMA_VERSION: u32 = 1;
/// Upper bound on refinement steps accepted by one request.
pub const MAX_REFINE_STEPS: usize = 500;

#[derive(Debug, Clone, serde::Serialize)]
pub struct ModelInfo {
    pub path: Option<String>,
    pub arch_hash: String,
    pub weights_hash: String,
    pub schedule: String,
    pub train_steps: usize,
    pub parameters: usize,
}

pub struct LoadedModel {
    pub model: Arc<dyn VelocityModel>,
    pub info: ModelInfo,
}

impl LoadedModel {
    pub fn from_denoiser(d: Denoiser, path: Option<String>) -> Self {
        let info = ModelInfo {
            path,
            arch_hash: d.arch_hash(),
            weights_hash: d.weights_hash(),
            schedule: "cosine".into(),
            train_steps: d.train_steps,
            parameters: d.params.len(),
        };
        Self { model: Arc::new(d), info }
    }
}

type LockMap = Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>;

pub struct AppState {
    pub store: Store,
    pub model: LoadedModel,
    pub corpus: Option<PathBuf>,
    workers: Arc<Semaphore>,
    session_locks: LockMap,
    idem_locks: LockMap,
}

impl AppState {
    pub fn new(store: Store, model: LoadedModel, corpus: Option<PathBuf>, workers: usize) -> Self {
        Self {
            store,
            model,
            corpus,
            workers: Arc::new(Semaphore::new(workers.max(1))),
            session_locks: Mutex::default(),
            idem_locks: Mutex::default(),
        }
    }

    fn lock_for(map: &LockMap, key: &str) -> Arc<tokio::sync::Mutex<()>> {
        map.lock().unwrap().entry(key.to_string()).or_default().clone()
    }

    /// Single-writer lock of a session; edit jobs, selections and
    /// refinements on the same session queue behind it.
    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        Self::lock_for(&self.session_locks, id)
    }
}

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub code: String,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self { status, code: code.into(), message: message.into() }
    }

    fn not_found(what: &str, id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, &format!("{what}_not_found"), format!("no {what} with id `{id}`"))
    }

    fn unprocessable(code: &str, message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, code, message)
    }
}

impl From<topoedit::Error> for ApiError {
    fn from(e: topoedit::Error) -> Self {
        use topoedit::Error as E;
        let status = match e {
            E::InvalidField(_)
            | E::Parse { .. }
            | E::ContractionBound(_)
            | E::InvalidRequest(_)
            | E::Unconstrained { .. }
            | E::WarpNonConvergence { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        Self::new(status, e.code(), e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "io", e.to_string())
    }
}

impl From<serde_json::Error> for ApiError {
    fn from(e: serde_json::Error) -> Self {
        ApiError::from(topoedit::Error::from(e))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        reply(self.status, json!({"code": self.code, "message": self.message}))
    }
}

fn with_version(mut body: Value) -> Value {
    if let Value::Object(m) = &mut body {
        m.insert("schema_version".into(), json!(SCHEMA_VERSION));
    }
    body
}

fn reply(status: StatusCode, body: Value) -> Response {
    (status, Json(with_version(body))).into_response()
}

type ApiResult = Result<Response, ApiError>;

#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldFormat {
    #[default]
    Values,
    Pgm,
}

#[derive(Debug, Default, Deserialize)]
pub struct FormatQuery {
    #[serde(default)]
    format: FieldFormat,
}

pub fn field_json(f: &DensityField, fmt: FieldFormat) -> Value {
    match fmt {
        FieldFormat::Values => json!({"width": f.width(), "height": f.height(), "values": f.values()}),
        FieldFormat::Pgm => json!({
            "width": f.width(),
            "height": f.height(),
            "pgm_base64": base64::engine::general_purpose::STANDARD.encode(grid_to_pgm(f.grid())),
        }),
    }
}

fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    Ok(serde_json::from_slice(body)?)
}

/// Runs `f` once per idempotency key and route; repeated keys replay the
/// stored response. Errors are not stored.
async fn idempotent<F, Fut>(state: &AppState, headers: &HeaderMap, route: &str, f: F) -> ApiResult
where
    F: FnOnce() -> Fut,
    Fut: Future<Output = Result<(StatusCode, Value), ApiError>>,
{
    let Some(key) = headers.get("idempotency-key") else {
        return f().await.map(|(s, v)| reply(s, v));
    };
    let key = key.to_str().ok().filter(|k| valid_id(k)).ok_or_else(|| {
        ApiError::unprocessable("invalid_idempotency_key", "idempotency key must be 1-64 characters of [A-Za-z0-9-]")
    })?;
    let name = format!("{}--{key}", route.trim_matches('/').replace('/', "_"));
    let lock = AppState::lock_for(&state.idem_locks, &name);
    let _guard = lock.lock().await;
    if let Some(r) = state.store.load_response(&name)? {
        let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::OK);
        return Ok((status, Json(r.body)).into_response());
    }
    let (status, body) = f().await?;
    let body = with_version(body);
    state.store.save_response(&name, &StoredResponse { status: status.as_u16(), body: body.clone() })?;
    Ok((status, Json(body)).into_response())
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/model", get(model_info))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/topology", get(get_topology))
        .route("/sessions/{id}/edits", post(create_edit))
        .route("/sessions/{id}/refine", post(refine_session))
        .route("/edits/{id}", get(get_edit))
        .route("/edits/{id}/select", post(select_candidate))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "route_not_found", "no such endpoint") })
        .with_state(state)
}

async fn healthz() -> Response {
    reply(StatusCode::OK, json!({"status": "ok"}))
}

async fn model_info(State(st): State<Arc<AppState>>) -> Response {
    reply(StatusCode::OK, json!({"model": st.model.info}))
}

fn load_session(st: &AppState, id: &str) -> Result<Session, ApiError> {
    st.store.load_session(id)?.ok_or_else(|| ApiError::not_found("session", id))
}

fn load_edit(st: &AppState, id: &str) -> Result<EditJob, ApiError> {
    st.store.load_edit(id)?.ok_or_else(|| ApiError::not_found("edit", id))
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T, ApiError> + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NewSession {
    Upload { field: DensityField, spec: ProblemSpec },
    Corpus { corpus_item: String },
}

async fn create_session(State(st): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let st2 = st.clone();
    idempotent(&st, &headers, "/sessions", || async move {
        let (field, spec, source) = match parse_body::<NewSession>(&body) {
            Ok(NewSession::Upload { field, spec }) => (field, spec, "upload".to_string()),
            Ok(NewSession::Corpus { corpus_item }) => {
                let dir = st2
                    .corpus
                    .as_ref()
                    .ok_or_else(|| ApiError::unprocessable("no_corpus", "the service was started without a corpus"))?;
                if !valid_id(&corpus_item) {
                    return Err(ApiError::not_found("corpus_item", &corpus_item));
                }
                let path = dir.join("designs").join(format!("{corpus_item}.json"));
                let item: CorpusItem = load_json(&path).map_err(|_| ApiError::not_found("corpus_item", &corpus_item))?;
                (item.field, item.spec, format!("corpus:{corpus_item}"))
            }
            // Re-parse for a precise message; untagged enums only say "did not match".
            Err(_) => {
                let v: Value = parse_body(&body)?;
                if v.get("corpus_item").is_none() {
                    let field: DensityField = serde_json::from_value(v.get("field").cloned().unwrap_or(Value::Null))?;
                    let spec: ProblemSpec = serde_json::from_value(v.get("spec").cloned().unwrap_or(Value::Null))?;
                    (field, spec, "upload".to_string())
                } else {
                    return Err(ApiError::unprocessable("parse_error", "corpus_item must be a string"));
                }
            }
        };
        spec.validate()?;
        let st3 = st2.clone();
        let session = blocking(move || {
            let c = compliance(&field, &spec, &topoedit::fem::FemModel::default())?;
            let s = Session {
                id: uuid::Uuid::new_v4().to_string(),
                source,
                spec,
                original: field.clone(),
                field,
                compliance: c,
                history: vec![],
            };
            st3.store.save_session(&s)?;
            Ok(s)
        })
        .await?;
        Ok((StatusCode::CREATED, json!({"session_id": session.id, "compliance": session.compliance})))
    })
    .await
}

async fn get_session(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<FormatQuery>) -> ApiResult {
    let s = load_session(&st, &id)?;
    Ok(reply(
        StatusCode::OK,
        json!({
            "session_id": s.id,
            "source": s.source,
            "spec": s.spec,
            "field": field_json(&s.field, q.format),
            "field_hash": s.field_hash(),
            "compliance": s.compliance,
            "history": s.history,
        }),
    ))
}

async fn get_topology(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<FormatQuery>) -> ApiResult {
    let s = load_session(&st, &id)?;
    let sk = blocking(move || Ok(skeletonize(&s.field)).map(|sk| (s, sk))).await?;
    let (s, sk) = sk;
    Ok(reply(
        StatusCode::OK,
        json!({
            "session_id": s.id,
            "field": field_json(&s.field, q.format),
            "skeleton": {"width": sk.mask.width(), "height": sk.mask.height(), "values": sk.mask.values()},
            "joints": sk.joints,
            "compliance": s.compliance,
            "volume_fraction": s.field.mean(),
            "spec": s.spec,
        }),
    ))
}

/// Edit request plus optional overrides of the per-kind default config.
fn parse_edit_body(body: &Bytes) -> Result<(EditRequest, EditConfig), ApiError> {
    let mut v: Value = parse_body(body)?;
    let overrides = v.as_object_mut().and_then(|m| m.remove("config"));
    let request: EditRequest = serde_json::from_value(v)?;
    let mut cfg = serde_json::to_value(EditConfig::for_request(&request))?;
    if let Some(Value::Object(o)) = overrides {
        for (k, val) in o {
            cfg[k] = val;
        }
    } else if overrides.as_ref().is_some_and(|o| !o.is_null()) {
        return Err(ApiError::unprocessable("parse_error", "config must be an object"));
    }
    let cfg: EditConfig = serde_json::from_value(cfg)?;
    request.validate()?;
    cfg.validate()?;
    Ok((request, cfg))
}

async fn create_edit(State(st): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let route = format!("/sessions/{id}/edits");
    let st2 = st.clone();
    idempotent(&st, &headers, &route, || async move {
        let session = load_session(&st2, &id)?;
        let (request, config) = parse_edit_body(&body)?;
        let job = EditJob {
            edit_id: uuid::Uuid::new_v4().to_string(),
            session_id: session.id.clone(),
            status: JobStatus::Queued,
            request,
            config,
            base_hash: session.field_hash(),
            error: None,
            result: None,
        };
        st2.store.save_edit(&job)?;
        let edit_id = job.edit_id.clone();
        tokio::spawn(run_job(st2.clone(), job));
        Ok((StatusCode::ACCEPTED, json!({"edit_id": edit_id, "status": JobStatus::Queued})))
    })
    .await
}

async fn run_job(st: Arc<AppState>, mut job: EditJob) {
    let lock = st.session_lock(&job.session_id);
    let _guard = lock.lock().await;
    let Ok(_permit) = st.workers.clone().acquire_owned().await else { return };
    job.status = JobStatus::Running;
    let _ = st.store.save_edit(&job);
    let st2 = st.clone();
    let (sid, req, cfg) = (job.session_id.clone(), job.request.clone(), job.config.clone());
    let out = blocking(move || {
        let s = load_session(&st2, &sid)?;
        let editor = Editor::new(st2.model.model.as_ref());
        Ok((s.field_hash(), editor.run(&s.field, &s.spec, &req, &cfg)?))
    })
    .await;
    match out {
        Ok((hash, set)) => {
            job.base_hash = hash;
            job.status = JobStatus::Done;
            job.result = Some(set);
        }
        Err(e) => {
            job.status = JobStatus::Failed;
            job.error = Some(JobError { code: e.code, message: e.message });
        }
    }
    let _ = st.store.save_edit(&job);
}

fn candidate_json(c: &Candidate, fmt: FieldFormat) -> Value {
    json!({
        "index": c.index,
        "error": c.error,
        "warnings": c.warnings,
        "stages": c.stages.iter().map(|s| json!({
            "refine_steps": s.record.refine_steps,
            "field": field_json(&s.field, fmt),
            "metrics": s.record,
        })).collect::<Vec<_>>(),
    })
}

fn set_json(set: &CandidateSet, fmt: FieldFormat) -> Value {
    json!({
        "original_spec": set.original_spec,
        "edited_spec": set.edited_spec,
        "original_compliance": set.original_compliance,
        "reference": field_json(&set.reference, fmt),
        "best_index": select_best(set),
        "direct": candidate_json(&set.direct, fmt),
        "candidates": set.candidates.iter().map(|c| candidate_json(c, fmt)).collect::<Vec<_>>(),
    })
}

async fn get_edit(State(st): State<Arc<AppState>>, Path(id): Path<String>, Query(q): Query<FormatQuery>) -> ApiResult {
    let job = load_edit(&st, &id)?;
    Ok(reply(
        StatusCode::OK,
        json!({
            "edit_id": job.edit_id,
            "session_id": job.session_id,
            "status": job.status,
            "error": job.error,
            "request": job.request,
            "config": job.config,
            "base_hash": job.base_hash,
            "result": job.result.as_ref().map(|s| set_json(s, q.format)),
        }),
    ))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SelectBody {
    candidate_index: usize,
    /// Refinement stage to commit; the last recorded stage by default.
    #[serde(default)]
    refine_steps: Option<usize>,
}

async fn select_candidate(State(st): State<Arc<AppState>>, Path(id): Path<String>, headers: HeaderMap, body: Bytes) -> ApiResult {
    let route = format!("/edits/{id}/select");
    let st2 = st.clone();
    idempotent(&st, &headers, &route, || async move {
        let sel: SelectBody = parse_body(&body)?;
        let job = load_edit(&st2, &id)?;
        if job.status != JobStatus::Done {
            return Err(ApiError::new(StatusCode::CONFLICT, "edit_not_ready", format!("edit is {:?}", job.status).to_lowercase()));
        }
        let set = job.result.as_ref().expect("done jobs carry a result");
        let cand = set
            .candidates
            .get(sel.candidate_index)
            .ok_or_else(|| ApiError::unprocessable("invalid_candidate", format!("candidate index {} out of range", sel.candidate_index)))?;
        let stage = match sel.refine_steps {
            Some(k) => cand.stage(k),
            None => cand.last(),
        }
        .ok_or_else(|| ApiError::unprocessable("invalid_candidate", "candidate has no result at that stage"))?;
        let lock = st2.session_lock(&job.session_id);
        let _guard = lock.lock().await;
        let mut s = load_session(&st2, &job.session_id)?;
        s.field = stage.field.clone();
        s.spec = set.edited_spec.clone();
        s.compliance = stage.record.compliance;
        s.history.push(HistoryEntry {
            action: "select".into(),
            edit_id: Some(job.edit_id.clone()),
            candidate: Some(sel.candidate_index),
            refine_steps: Some(stage.record.refine_steps),
            record: Some(stage.record.clone()),
            compliance: s.compliance,
            field_hash: s.field_hash(),
        });
        st2.store.save_session(&s)?;
        Ok((
            StatusCode::OK,
            json!({"session_id": s.id, "field_hash": s.field_hash(), "compliance": s.compliance, "history_len": s.history.len()}),
        ))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RefineBody {
    steps: usize,
}

async fn refine_session(
    State(st): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<FormatQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult {
    let route = format!("/sessions/{id}/refine");
    let st2 = st.clone();
    idempotent(&st, &headers, &route, || async move {
        let RefineBody { steps } = parse_body(&body)?;
        if steps == 0 || steps > MAX_REFINE_STEPS {
            return Err(ApiError::unprocessable("invalid_request", format!("steps must be in 1..={MAX_REFINE_STEPS}")));
        }
        load_session(&st2, &id)?;
        let lock = st2.session_lock(&id);
        let _guard = lock.lock().await;
        let st3 = st2.clone();
        let s = blocking(move || {
            let mut s = load_session(&st3, &id)?;
            let fem = topoedit::fem::FemModel::default();
            s.field = refine(&s.field, &s.spec, &fem, &topoedit::fem::SimpOptions::default(), steps)?;
            s.compliance = compliance(&s.field, &s.spec, &fem)?;
            s.history.push(HistoryEntry {
                action: "refine".into(),
                edit_id: None,
                candidate: None,
                refine_steps: Some(steps),
                record: None,
                compliance: s.compliance,
                field_hash: grid_hash(s.field.grid()),
            });
            st3.store.save_session(&s)?;
            Ok(s)
        })
        .await?;
        Ok((
            StatusCode::OK,
            json!({
                "session_id": s.id,
                "field": field_json(&s.field, q.format),
                "field_hash": s.field_hash(),
                "compliance": s.compliance,
                "volume_fraction": s.field.mean(),
                "history_len": s.history.len(),
            }),
        ))
    })
    .await
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(addr: std::net::SocketAddr, state: Arc<AppState>) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
