//! REST routes under `/api`.

use std::collections::BTreeSet;

use axum::body::Bytes;
use axum::extract::{Multipart, Path, Query, State};
use axum::http::header::{CONTENT_TYPE, ETAG, IF_NONE_MATCH};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use orbitcad_core::io::{export_model, Format};
use orbitcad_core::reduction::{apply_plan, ReductionPlan};
use orbitcad_session::{canonical_json, canonical_json_full, state_hash, Payload, SessionState};
use serde::Deserialize;
use serde_json::{json, Value};

use crate::auth::AuthUser;
use crate::error::{ApiError, ApiResult};
use crate::jobs::ThumbTarget;
use crate::session::CLOSE_SESSION_DELETED;
use crate::store::{new_id, ModelMeta, ModelStatus, Project, Role, SessionMeta};
use crate::AppState;

pub fn routes() -> Router<AppState> {
    Router::new()
        .route("/health", get(health))
        .route("/users", post(create_user).get(list_users))
        .route("/users/me", get(me))
        .route("/projects", post(create_project).get(list_projects))
        .route("/projects/{id}", get(get_project).patch(rename_project).delete(delete_project))
        .route("/projects/{id}/members/{user_id}", put(set_member).delete(remove_member))
        .route("/models", post(upload_model).get(list_models))
        .route("/models/{id}", get(get_model).delete(delete_model))
        .route("/models/{id}/plan", post(post_plan).get(get_plan))
        .route("/models/{id}/export", get(export))
        .route("/models/{id}/thumbnail", get(model_thumbnail))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session).delete(delete_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/flush", post(flush_session))
        .route("/sessions/{id}/thumbnail", post(render_session_thumbnail).get(session_thumbnail))
        .route("/jobs/{id}", get(get_job))
}

async fn health() -> Json<Value> {
    Json(json!({"status": "ok", "version": env!("CARGO_PKG_VERSION")}))
}

// Users

#[derive(Deserialize)]
struct NewUser {
    name: String,
    #[serde(default)]
    site_admin: bool,
}

async fn create_user(State(st): State<AppState>, user: AuthUser, Json(body): Json<NewUser>) -> ApiResult<impl IntoResponse> {
    user.require_site_admin()?;
    if body.name.trim().is_empty() {
        return Err(ApiError::bad_request("name must not be empty"));
    }
    let (u, token) = st.store.create_user(&body.name, body.site_admin, None)?;
    Ok((StatusCode::CREATED, Json(json!({"user": u.public(), "token": token}))))
}

async fn list_users(State(st): State<AppState>, user: AuthUser) -> ApiResult<Json<Value>> {
    user.require_site_admin()?;
    Ok(Json(Value::Array(st.store.users().iter().map(|u| u.public()).collect())))
}

async fn me(user: AuthUser) -> Json<Value> {
    Json(user.0.public())
}

// Projects

#[derive(Deserialize)]
struct NewProject {
    name: String,
}

async fn create_project(State(st): State<AppState>, user: AuthUser, Json(body): Json<NewProject>) -> ApiResult<impl IntoResponse> {
    if body.name.trim().is_empty() {
        return Err(ApiError::bad_request("name must not be empty"));
    }
    let p = Project {
        project_id: new_id("p"),
        name: body.name,
        members: [(user.0.user_id.clone(), Role::Admin)].into(),
        model_ids: BTreeSet::new(),
        session_ids: BTreeSet::new(),
    };
    st.store.save_project(&p)?;
    Ok((StatusCode::CREATED, Json(p)))
}

async fn list_projects(State(st): State<AppState>, user: AuthUser) -> Json<Vec<Project>> {
    Json(st.store.projects().into_iter().filter(|p| st.store.role(&user.0, &p.project_id).is_some()).collect())
}

async fn get_project(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<Json<Project>> {
    user.require(&st, &id, Role::Viewer)?;
    st.store.project(&id).map(Json).ok_or_else(|| ApiError::not_found("project", &id))
}

async fn rename_project(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Json(body): Json<NewProject>) -> ApiResult<Json<Project>> {
    user.require(&st, &id, Role::Admin)?;
    let p = st.store.update_project(&id, |p| {
        p.name = body.name;
        p.clone()
    })?;
    p.map(Json).ok_or_else(|| ApiError::not_found("project", &id))
}

async fn delete_project(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<StatusCode> {
    user.require(&st, &id, Role::Admin)?;
    let Some(p) = st.store.delete_project(&id)? else { return Err(ApiError::not_found("project", &id)) };
    for s in &p.session_ids {
        drop_session(&st, s)?;
    }
    for m in &p.model_ids {
        st.store.delete_model(m)?;
    }
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct Membership {
    role: Role,
}

async fn set_member(State(st): State<AppState>, user: AuthUser, Path((id, uid)): Path<(String, String)>, Json(body): Json<Membership>) -> ApiResult<Json<Project>> {
    user.require(&st, &id, Role::Admin)?;
    if st.store.user(&uid).is_none() {
        return Err(ApiError::not_found("user", &uid));
    }
    let p = st.store.update_project(&id, |p| {
        p.members.insert(uid, body.role);
        p.clone()
    })?;
    p.map(Json).ok_or_else(|| ApiError::not_found("project", &id))
}

async fn remove_member(State(st): State<AppState>, user: AuthUser, Path((id, uid)): Path<(String, String)>) -> ApiResult<StatusCode> {
    user.require(&st, &id, Role::Admin)?;
    let removed = st.store.update_project(&id, |p| p.members.remove(&uid).is_some())?;
    match removed {
        Some(true) => Ok(StatusCode::NO_CONTENT),
        _ => Err(ApiError::not_found("member", &uid)),
    }
}

// Models

fn model_for(st: &AppState, user: &AuthUser, id: &str, need: Role) -> ApiResult<ModelMeta> {
    let m = st.store.model_meta(id).ok_or_else(|| ApiError::not_found("model", id))?;
    user.require(st, &m.project_id, need)?;
    Ok(m)
}

fn require_ready(m: &ModelMeta) -> ApiResult<()> {
    match m.status {
        ModelStatus::Ready => Ok(()),
        ModelStatus::Failed => Err(ApiError::conflict(format!("model {} failed: {}", m.model_id, m.error.as_deref().unwrap_or("unknown error")))),
        s => Err(ApiError::conflict(format!("model {} is {}", m.model_id, json!(s).as_str().unwrap_or("")))),
    }
}

async fn upload_model(State(st): State<AppState>, user: AuthUser, mut form: Multipart) -> ApiResult<impl IntoResponse> {
    let (mut project_id, mut name, mut format, mut unit_scale) = (None, None, None, None);
    let mut file: Option<(Option<String>, Bytes)> = None;
    while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.to_string()))? {
        let key = field.name().unwrap_or_default().to_string();
        if key == "file" {
            let filename = field.file_name().map(str::to_string);
            let bytes = field.bytes().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
            file = Some((filename, bytes));
            continue;
        }
        let text = field.text().await.map_err(|e| ApiError::bad_request(e.to_string()))?;
        match key.as_str() {
            "project_id" => project_id = Some(text),
            "name" => name = Some(text),
            "format" => format = Some(text),
            "unit_scale" => unit_scale = Some(text.parse::<f64>().map_err(|e| ApiError::bad_request(format!("unit_scale: {e}")))?),
            other => return Err(ApiError::bad_request(format!("unexpected field {other}"))),
        }
    }
    let project_id = project_id.ok_or_else(|| ApiError::bad_request("missing field project_id"))?;
    user.require(&st, &project_id, Role::Member)?;
    let (filename, bytes) = file.ok_or_else(|| ApiError::bad_request("missing field file"))?;
    let ext = format
        .or_else(|| filename.as_deref().and_then(|f| f.rsplit_once('.')).map(|(_, e)| e.to_string()))
        .ok_or_else(|| ApiError::bad_request("format is required when the file name has no extension"))?
        .to_ascii_lowercase();
    if Format::from_extension(&ext).is_none() {
        return Err(ApiError::unprocessable("unsupported_format", format!("unsupported model format {ext}; expected obj, stl, ply, gltf or glb")));
    }
    if let Some(s) = unit_scale {
        if !(s > 0.0 && s.is_finite()) {
            return Err(ApiError::bad_request(format!("unit_scale must be positive, got {s}")));
        }
    }
    let model_id = new_id("m");
    let dir = st.store.model_dir(&model_id);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(format!("source.{ext}")), &bytes)?;
    let meta = ModelMeta {
        model_id: model_id.clone(),
        project_id: project_id.clone(),
        name: name.or(filename).unwrap_or_else(|| model_id.clone()),
        status: ModelStatus::Queued,
        error: None,
        source_ext: Some(ext),
        unit_scale,
        triangle_count: 0,
        node_count: 0,
        sha256: None,
        derived_from: None,
        report: None,
        warnings: Vec::new(),
    };
    st.store.save_model_meta(&meta)?;
    st.store.update_project(&project_id, |p| p.model_ids.insert(model_id.clone()))?;
    let job = st.jobs.process_model(&model_id);
    Ok((StatusCode::CREATED, Json(json!({"model": meta, "job": job}))))
}

#[derive(Deserialize)]
struct ProjectFilter {
    project_id: Option<String>,
}

async fn list_models(State(st): State<AppState>, user: AuthUser, Query(q): Query<ProjectFilter>) -> Json<Vec<ModelMeta>> {
    Json(
        st.store
            .models()
            .into_iter()
            .filter(|m| q.project_id.as_ref().is_none_or(|p| *p == m.project_id))
            .filter(|m| st.store.role(&user.0, &m.project_id).is_some())
            .collect(),
    )
}

async fn get_model(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<Json<ModelMeta>> {
    model_for(&st, &user, &id, Role::Viewer).map(Json)
}

async fn delete_model(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let m = model_for(&st, &user, &id, Role::Member)?;
    st.store.delete_model(&id)?;
    st.store.update_project(&m.project_id, |p| p.model_ids.remove(&id))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct PlanQuery {
    #[serde(default)]
    dry_run: bool,
}

fn plan_error(e: orbitcad_core::reduction::PlanError) -> ApiError {
    ApiError::unprocessable("invalid_plan", e.to_string())
}

async fn post_plan(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<PlanQuery>, body: String) -> ApiResult<Response> {
    let m = model_for(&st, &user, &id, if q.dry_run { Role::Viewer } else { Role::Member })?;
    require_ready(&m)?;
    let plan = ReductionPlan::from_json(&body).map_err(plan_error)?;
    if q.dry_run {
        let store = st.store.clone();
        let report = tokio::task::spawn_blocking(move || -> ApiResult<_> {
            let model = store.load_model(&id)?;
            let (_, report) = apply_plan(&model, &plan).map_err(plan_error)?;
            Ok(report)
        })
        .await
        .map_err(ApiError::internal)??;
        return Ok(Json(report).into_response());
    }
    let derived = new_id("m");
    let meta = ModelMeta {
        model_id: derived.clone(),
        project_id: m.project_id.clone(),
        name: format!("{} (reduced)", m.name),
        status: ModelStatus::Queued,
        error: None,
        source_ext: None,
        unit_scale: None,
        triangle_count: 0,
        node_count: 0,
        sha256: None,
        derived_from: Some(id.clone()),
        report: None,
        warnings: Vec::new(),
    };
    st.store.save_model_meta(&meta)?;
    st.store.save_plan(&derived, &plan)?;
    st.store.update_project(&m.project_id, |p| p.model_ids.insert(derived.clone()))?;
    let job = st.jobs.reduce_model(&id, &derived, plan);
    Ok((StatusCode::ACCEPTED, Json(json!({"model": meta, "job": job}))).into_response())
}

async fn get_plan(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<Json<ReductionPlan>> {
    model_for(&st, &user, &id, Role::Viewer)?;
    st.store.load_plan(&id).map(Json).ok_or_else(|| ApiError::not_found("plan for model", &id))
}

#[derive(Deserialize)]
struct ExportQuery {
    format: Option<String>,
}

async fn export(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<ExportQuery>, headers: HeaderMap) -> ApiResult<Response> {
    let m = model_for(&st, &user, &id, Role::Viewer)?;
    require_ready(&m)?;
    let fmt = q.format.unwrap_or_else(|| "ocm".into()).to_ascii_lowercase();
    let etag = format!("\"{}-{fmt}\"", m.sha256.as_deref().unwrap_or_default());
    if headers.get(IF_NONE_MATCH).and_then(|v| v.to_str().ok()).is_some_and(|v| v.split(',').any(|t| t.trim() == etag || t.trim() == "*")) {
        return Ok((StatusCode::NOT_MODIFIED, [(ETAG, etag)]).into_response());
    }
    let (bytes, content_type) = if fmt == "ocm" {
        (st.store.model_bytes(&id)?, "application/octet-stream")
    } else {
        let format = Format::from_extension(&fmt).ok_or_else(|| ApiError::bad_request(format!("unknown export format {fmt}")))?;
        let store = st.store.clone();
        let model = tokio::task::spawn_blocking(move || store.load_model(&id)).await.map_err(ApiError::internal)??;
        let out = export_model(&model, format).map_err(|e| ApiError::unprocessable("export_failed", e.to_string()))?;
        let ct = match format {
            Format::Gltf => "model/gltf-binary",
            Format::Stl => "model/stl",
            Format::Obj => "model/obj",
            Format::Ply => "application/ply",
        };
        (out.bytes, ct)
    };
    Ok(([(CONTENT_TYPE, content_type.to_string()), (ETAG, etag)], bytes).into_response())
}

#[derive(Deserialize)]
struct ThumbQuery {
    viewpoints: Option<u32>,
    slide: Option<String>,
}

fn viewpoints(q: &ThumbQuery) -> ApiResult<u32> {
    let v = q.viewpoints.unwrap_or(24);
    if (1..=360).contains(&v) {
        Ok(v)
    } else {
        Err(ApiError::bad_request(format!("viewpoints must be between 1 and 360, got {v}")))
    }
}

fn png(bytes: Vec<u8>) -> Response {
    ([(CONTENT_TYPE, "image/png")], bytes).into_response()
}

/// Serves a finished model thumbnail, or starts rendering it and answers
/// 202 with the job.
async fn model_thumbnail(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<ThumbQuery>) -> ApiResult<Response> {
    let m = model_for(&st, &user, &id, Role::Viewer)?;
    require_ready(&m)?;
    let v = viewpoints(&q)?;
    let target = ThumbTarget::Model { model_id: id };
    let path = st.store.thumbnail_path(&target.key(v));
    if let Ok(bytes) = std::fs::read(&path) {
        return Ok(png(bytes));
    }
    let job = st.jobs.thumbnail(target, v);
    Ok((StatusCode::ACCEPTED, Json(job)).into_response())
}

// Sessions

fn session_for(st: &AppState, user: &AuthUser, id: &str, need: Role) -> ApiResult<SessionMeta> {
    let s = st.store.session_meta(id).ok_or_else(|| ApiError::not_found("session", id))?;
    user.require(st, &s.project_id, need)?;
    Ok(s)
}

fn live(st: &AppState, id: &str) -> ApiResult<std::sync::Arc<crate::session::LiveSession>> {
    st.sessions.get(id)?.ok_or_else(|| ApiError::not_found("session", id))
}

fn session_summary(meta: &SessionMeta, state: &SessionState, read_only: bool) -> Value {
    json!({
        "session_id": meta.session_id,
        "project_id": meta.project_id,
        "name": meta.name,
        "high_water": state.last_op_id,
        "active_model": state.active_model,
        "participants": state.participants.iter().map(|(cid, p)| json!({"cid": cid, "name": p.name, "kind": p.kind})).collect::<Vec<_>>(),
        "slides": state.slides.values().map(|s| json!({"slide_id": s.slide_id, "name": s.name})).collect::<Vec<_>>(),
        "read_only": read_only,
        "ws_url": format!("/ws/sessions/{}", meta.session_id),
    })
}

#[derive(Deserialize)]
struct NewSession {
    project_id: String,
    name: String,
    model_id: Option<String>,
}

async fn create_session(State(st): State<AppState>, user: AuthUser, Json(body): Json<NewSession>) -> ApiResult<impl IntoResponse> {
    user.require(&st, &body.project_id, Role::Member)?;
    if let Some(mid) = &body.model_id {
        let m = st.store.model_meta(mid).filter(|m| m.project_id == body.project_id).ok_or_else(|| ApiError::not_found("model", mid))?;
        require_ready(&m)?;
    }
    let meta = SessionMeta {
        session_id: new_id("s"),
        project_id: body.project_id.clone(),
        name: body.name,
    };
    st.store.save_session_meta(&meta)?;
    st.store.update_project(&body.project_id, |p| p.session_ids.insert(meta.session_id.clone()))?;
    let s = live(&st, &meta.session_id)?;
    if let Some(model_id) = body.model_id {
        s.submit(&format!("user:{}", user.0.user_id), Payload::SetActiveModel { model_id })
            .map_err(|(_, m)| ApiError::internal(m))?;
    }
    Ok((StatusCode::CREATED, Json(session_summary(&meta, &s.state(), s.is_read_only()))))
}

async fn list_sessions(State(st): State<AppState>, user: AuthUser, Query(q): Query<ProjectFilter>) -> Json<Vec<SessionMeta>> {
    Json(
        st.store
            .sessions()
            .into_iter()
            .filter(|s| q.project_id.as_ref().is_none_or(|p| *p == s.project_id))
            .filter(|s| st.store.role(&user.0, &s.project_id).is_some())
            .collect(),
    )
}

async fn get_session(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let meta = session_for(&st, &user, &id, Role::Viewer)?;
    let s = live(&st, &id)?;
    Ok(Json(session_summary(&meta, &s.state(), s.is_read_only())))
}

fn drop_session(st: &AppState, id: &str) -> ApiResult<()> {
    if let Some(s) = st.sessions.remove(id) {
        s.close(CLOSE_SESSION_DELETED, "session deleted");
    }
    st.store.delete_session(id)?;
    Ok(())
}

async fn delete_session(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>) -> ApiResult<StatusCode> {
    let meta = session_for(&st, &user, &id, Role::Admin)?;
    drop_session(&st, &id)?;
    st.store.update_project(&meta.project_id, |p| p.session_ids.remove(&id))?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct StateQuery {
    #[serde(default)]
    full: bool,
}

/// Canonical state text; the `x-state-hash` header carries the hash of the
/// full form.
async fn session_state(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<StateQuery>) -> ApiResult<Response> {
    session_for(&st, &user, &id, Role::Viewer)?;
    let state = live(&st, &id)?.state();
    let body = if q.full { canonical_json_full(&state) } else { canonical_json(&state) };
    Ok((
        [
            (CONTENT_TYPE, "application/json".to_string()),
            (axum::http::HeaderName::from_static("x-state-hash"), state_hash(&state)),
            (axum::http::HeaderName::from_static("x-high-water"), state.last_op_id.to_string()),
        ],
        body,
    )
        .into_response())
}

#[derive(Deserialize)]
struct FlushQuery {
    #[serde(default = "yes")]
    compact: bool,
}

fn yes() -> bool {
    true
}

async fn flush_session(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<FlushQuery>) -> ApiResult<Json<crate::session::FlushReport>> {
    session_for(&st, &user, &id, Role::Member)?;
    let s = live(&st, &id)?;
    let report = tokio::task::spawn_blocking(move || s.flush(q.compact)).await.map_err(ApiError::internal)??;
    Ok(Json(report))
}

fn session_target(st: &AppState, id: &str, q: &ThumbQuery) -> ApiResult<ThumbTarget> {
    let state = live(st, id)?.state();
    if let Some(slide) = &q.slide {
        if !state.slides.contains_key(slide) {
            return Err(ApiError::not_found("slide", slide));
        }
    }
    if state.active_model.is_none() {
        return Err(ApiError::conflict("session has no active model"));
    }
    Ok(ThumbTarget::Session {
        session_id: id.to_string(),
        state,
        slide: q.slide.clone(),
    })
}

async fn render_session_thumbnail(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<ThumbQuery>) -> ApiResult<impl IntoResponse> {
    session_for(&st, &user, &id, Role::Viewer)?;
    let v = viewpoints(&q)?;
    let target = session_target(&st, &id, &q)?;
    Ok((StatusCode::ACCEPTED, Json(st.jobs.thumbnail(target, v))))
}

/// The most recently rendered session thumbnail.
async fn session_thumbnail(State(st): State<AppState>, user: AuthUser, Path(id): Path<String>, Query(q): Query<ThumbQuery>) -> ApiResult<Response> {
    session_for(&st, &user, &id, Role::Viewer)?;
    let v = viewpoints(&q)?;
    let key = ThumbTarget::Session {
        session_id: id.clone(),
        state: SessionState::new(),
        slide: q.slide.clone(),
    }
    .key(v);
    match std::fs::read(st.store.thumbnail_path(&key)) {
        Ok(bytes) => Ok(png(bytes)),
        Err(_) => Err(ApiError::not_found("thumbnail", &key)),
    }
}

async fn get_job(State(st): State<AppState>, _user: AuthUser, Path(id): Path<String>) -> ApiResult<Json<crate::jobs::Job>> {
    st.jobs.get(&id).map(Json).ok_or_else(|| ApiError::not_found("job", &id))
}
