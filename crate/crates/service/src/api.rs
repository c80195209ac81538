//! REST API over a [`ProjectStore`].

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderName, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use textflow::tensorize::EmbeddingConfig;
use textflow::{EntryId, PackError};
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::error::StoreError;
use crate::journal::{EntryBody, Op, OpOutcome};
use crate::store::{Committed, ProjectStore, SuggestQuery};
use crate::suggest::SuggestError;

pub const REVISION_HEADER: &str = "x-revision";

type Shared = Arc<ProjectStore>;

/// An error response: `{"error": code, "detail": message}`.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    detail: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, detail: impl Into<String>) -> Self {
        Self {
            status,
            code,
            detail: detail.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        use StatusCode as S;
        let detail = e.to_string();
        let (status, code) = match &e {
            StoreError::UnknownProject(_) => (S::NOT_FOUND, "unknown_project"),
            StoreError::UnknownPack(_) => (S::NOT_FOUND, "unknown_pack"),
            StoreError::UnknownMultipack(_) => (S::NOT_FOUND, "unknown_multipack"),
            StoreError::UnknownSuggestion(_) => (S::NOT_FOUND, "unknown_suggestion"),
            StoreError::ProjectExists(_) => (S::CONFLICT, "project_exists"),
            StoreError::PackExists(_) => (S::CONFLICT, "pack_exists"),
            StoreError::MultipackExists(_) => (S::CONFLICT, "multipack_exists"),
            StoreError::RevisionConflict { .. } => (S::CONFLICT, "revision_conflict"),
            StoreError::AlreadyDecided(_) => (S::CONFLICT, "already_decided"),
            StoreError::BadRequest(_) => (S::BAD_REQUEST, "bad_request"),
            StoreError::InvalidName(_) => (S::BAD_REQUEST, "invalid_name"),
            StoreError::Ontology(_) => (S::BAD_REQUEST, "invalid_ontology"),
            StoreError::Suggest(SuggestError::WrongPackCount(_)) => (S::UNPROCESSABLE_ENTITY, "wrong_pack_count"),
            StoreError::Suggest(_) => (S::BAD_REQUEST, "bad_request"),
            StoreError::Pack(p) => match p {
                PackError::ValidationFailed(_) | PackError::OutOfBounds { .. } | PackError::UnknownType(_) => {
                    (S::BAD_REQUEST, "validation_failed")
                }
                PackError::DanglingReference(_) => (S::BAD_REQUEST, "dangling_reference"),
                PackError::UnknownEntry(_) => (S::NOT_FOUND, "unknown_entry"),
                PackError::ReferencedEntry(_) => (S::UNPROCESSABLE_ENTITY, "referenced_entry"),
                PackError::MalformedJson(_) => (S::BAD_REQUEST, "malformed_json"),
                _ => (S::BAD_REQUEST, "bad_request"),
            },
            StoreError::Corrupt { .. } | StoreError::Io(_) | StoreError::Crashed => {
                (S::INTERNAL_SERVER_ERROR, "internal")
            }
        };
        Self::new(status, code, detail)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(json!({"error": self.code, "detail": self.detail}))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))
}

/// Runs store work off the async executor; store calls do blocking file I/O.
async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, StoreError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
        .map_err(ApiError::from)
}

fn json_text(status: StatusCode, body: String) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

fn pack_response(status: StatusCode, c: &Committed) -> Response {
    let mut resp = json_text(status, c.json.clone());
    resp.headers_mut().insert(
        HeaderName::from_static(REVISION_HEADER),
        HeaderValue::from(c.revision),
    );
    resp
}

async fn list_projects(State(store): State<Shared>) -> Json<Value> {
    Json(json!({"projects": store.project_names()}))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateProject {
    name: String,
    #[serde(default)]
    ontology: Option<Value>,
}

async fn create_project(State(store): State<Shared>, body: Bytes) -> ApiResult<Response> {
    let req: CreateProject = parse_body(&body)?;
    let ontology = req.ontology.map(|v| v.to_string());
    let name = blocking(move || store.create_project(&req.name, ontology.as_deref()).map(|p| p.name().to_string()))
        .await?;
    Ok((StatusCode::CREATED, Json(json!({"name": name}))).into_response())
}

async fn get_ontology(State(store): State<Shared>, Path(p): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(store.project(&p)?.ontology().describe()))
}

async fn list_packs(State(store): State<Shared>, Path(p): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!({"packs": store.project(&p)?.pack_ids()})))
}

async fn import_pack(State(store): State<Shared>, Path(p): Path<String>, body: Bytes) -> ApiResult<Response> {
    let source = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))?
        .to_string();
    let c = blocking(move || store.project(&p)?.import_pack(&source)).await?;
    Ok(pack_response(StatusCode::CREATED, &c))
}

async fn get_pack(State(store): State<Shared>, Path((p, id)): Path<(String, String)>) -> ApiResult<Response> {
    let c = store.project(&p)?.snapshot(&id)?;
    Ok(pack_response(StatusCode::OK, &c))
}

async fn mutate(store: Shared, p: String, id: String, revision: u64, op: Op) -> ApiResult<(OpOutcome, u64)> {
    blocking(move || {
        let (out, c) = store.project(&p)?.apply(&id, revision, op)?;
        Ok((out, c.revision))
    })
    .await
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct AddEntry {
    revision: u64,
    entry: EntryBody,
}

async fn add_entry(
    State(store): State<Shared>,
    Path((p, id)): Path<(String, String)>,
    body: Bytes,
) -> ApiResult<Response> {
    let req: AddEntry = parse_body(&body)?;
    let (out, revision) = mutate(store, p, id, req.revision, Op::Add { entry: req.entry }).await?;
    let OpOutcome::Added(eid) = out else {
        unreachable!("add yields Added")
    };
    Ok((StatusCode::OK, Json(json!({"id": eid, "revision": revision}))).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PatchEntry {
    revision: u64,
    #[serde(default)]
    begin: Option<usize>,
    #[serde(default)]
    end: Option<usize>,
    #[serde(default)]
    attributes: BTreeMap<String, Option<Value>>,
}

async fn patch_entry(
    State(store): State<Shared>,
    Path((p, id, eid)): Path<(String, String, u64)>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let req: PatchEntry = parse_body(&body)?;
    let op = Op::Update {
        attributes: req.attributes,
        begin: req.begin,
        end: req.end,
        id: EntryId(eid),
    };
    let (_, revision) = mutate(store, p, id, req.revision, op).await?;
    Ok(Json(json!({"id": eid, "revision": revision})))
}

#[derive(Deserialize)]
struct DeleteParams {
    revision: u64,
    #[serde(default)]
    cascade: bool,
}

async fn delete_entry(
    State(store): State<Shared>,
    Path((p, id, eid)): Path<(String, String, u64)>,
    Query(q): Query<DeleteParams>,
) -> ApiResult<Json<Value>> {
    let op = Op::Delete {
        cascade: q.cascade,
        id: EntryId(eid),
    };
    let (out, revision) = mutate(store, p, id, q.revision, op).await?;
    let OpOutcome::Deleted(ids) = out else {
        unreachable!("delete yields Deleted")
    };
    Ok(Json(json!({"deleted": ids, "revision": revision})))
}

async fn list_multipacks(State(store): State<Shared>, Path(p): Path<String>) -> ApiResult<Json<Value>> {
    Ok(Json(json!({"multipacks": store.project(&p)?.multipack_names()})))
}

async fn import_multipack(State(store): State<Shared>, Path(p): Path<String>, body: Bytes) -> ApiResult<Response> {
    let source = std::str::from_utf8(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "malformed_json", e.to_string()))?
        .to_string();
    let name = blocking(move || store.project(&p)?.import_multipack(&source)).await?;
    Ok((StatusCode::CREATED, Json(json!({"name": name}))).into_response())
}

async fn get_multipack(State(store): State<Shared>, Path((p, m)): Path<(String, String)>) -> ApiResult<Response> {
    let text = store.project(&p)?.multipack_json(&m)?;
    Ok(json_text(StatusCode::OK, text))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SuggestParams {
    #[serde(rename = "type", default = "default_link_type")]
    link_type: String,
    #[serde(default = "default_span_type")]
    span_type: String,
    #[serde(default = "default_threshold")]
    threshold: f64,
    #[serde(default)]
    rel_type: Option<String>,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    seed: Option<u64>,
}

fn default_link_type() -> String {
    "CrossDocLink".into()
}

fn default_span_type() -> String {
    "EventMention".into()
}

fn default_threshold() -> f64 {
    0.5
}

async fn get_suggestions(
    State(store): State<Shared>,
    Path((p, m)): Path<(String, String)>,
    Query(q): Query<SuggestParams>,
) -> ApiResult<Json<Value>> {
    let mut embedding = EmbeddingConfig::default();
    if let Some(dim) = q.dim {
        if dim == 0 {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad_request", "`dim` must be positive"));
        }
        embedding.dim = dim;
    }
    if let Some(seed) = q.seed {
        embedding.seed = seed;
    }
    let mut attributes = BTreeMap::new();
    if let Some(rt) = q.rel_type {
        attributes.insert("rel_type".to_string(), Value::String(rt));
    }
    let query = SuggestQuery {
        link_type: q.link_type,
        span_type: q.span_type,
        threshold: q.threshold,
        attributes,
        embedding,
    };
    let queue = blocking(move || store.project(&p)?.suggestions(&m, &query)).await?;
    Ok(Json(json!({"suggestions": queue})))
}

/// `POST .../suggestions/{id}:accept` or `{id}:reject`.
async fn decide_suggestion(
    State(store): State<Shared>,
    Path((p, m, action)): Path<(String, String, String)>,
) -> ApiResult<Json<Value>> {
    let bad = || ApiError::new(StatusCode::NOT_FOUND, "unknown_route", format!("no action `{action}`"));
    let (sid, verb) = action.split_once(':').ok_or_else(bad)?;
    let accept = match verb {
        "accept" => true,
        "reject" => false,
        _ => return Err(bad()),
    };
    let sid: u64 = sid.parse().map_err(|_| bad())?;
    let decided = blocking(move || store.project(&p)?.decide(&m, sid, accept)).await?;
    Ok(Json(serde_json::to_value(decided).expect("suggestions serialize")))
}

/// Builds the router. `cors_origin` of `None` allows any origin.
pub fn router(store: Arc<ProjectStore>, cors_origin: Option<&str>) -> Router {
    let origin = match cors_origin {
        Some(o) => AllowOrigin::exact(HeaderValue::from_str(o).unwrap_or(HeaderValue::from_static("null"))),
        None => AllowOrigin::any(),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([Method::GET, Method::POST, Method::PATCH, Method::DELETE])
        .allow_headers([header::CONTENT_TYPE])
        .expose_headers([HeaderName::from_static(REVISION_HEADER)]);
    Router::new()
        .route("/projects", get(list_projects).post(create_project))
        .route("/projects/{p}/ontology", get(get_ontology))
        .route("/projects/{p}/packs", get(list_packs).post(import_pack))
        .route("/projects/{p}/packs/{id}", get(get_pack))
        .route("/projects/{p}/packs/{id}/entries", post(add_entry))
        .route(
            "/projects/{p}/packs/{id}/entries/{eid}",
            patch(patch_entry).delete(delete_entry),
        )
        .route("/projects/{p}/multipacks", get(list_multipacks).post(import_multipack))
        .route("/projects/{p}/multipacks/{m}", get(get_multipack))
        .route("/projects/{p}/multipacks/{m}/suggestions", get(get_suggestions))
        .route("/projects/{p}/multipacks/{m}/suggestions/{action}", post(decide_suggestion))
        .layer(cors)
        .with_state(store)
}

/// Opens the store at `root` and serves until ctrl-c.
pub async fn serve(root: PathBuf, port: u16, cors_origin: Option<String>) -> Result<(), StoreError> {
    let store = Arc::new(tokio::task::spawn_blocking(move || ProjectStore::open(root)).await.expect("open task")?);
    let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store, cors_origin.as_deref()))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
