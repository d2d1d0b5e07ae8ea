//! REST admin/query API and the mounted `/oai` endpoint.

use std::io;
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::{Path, RawQuery, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::oneshot;

use ino_core::dissemination::{DisseminationError, DisseminationPath};
use ino_core::ndr_api::{AgentKind, MetadataSpec, ResourceContent, ResourceSpec};
use ino_core::object_store::{DatastreamContent, StoreError, StoreOptions};
use ino_core::oai_provider::{OaiError, OaiProvider};
use ino_core::ontology::OntologyError;
use ino_core::{ApiError, ObjectId, Repository, SystemClock, Term};

use crate::config::{Config, ConfigError};

pub const KEY_HEADER: &str = "x-ino-key";

/// How often the background consumer folds new change events into the OAI cache.
const CONSUME_INTERVAL: Duration = Duration::from_millis(250);

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("port {0} is already in use")]
    PortInUse(u16),
    #[error("data directory {0} is locked by another instance")]
    Locked(PathBuf),
    #[error(transparent)]
    Api(ApiError),
    #[error(transparent)]
    Oai(OaiError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<ApiError> for ServeError {
    fn from(e: ApiError) -> Self {
        match e {
            ApiError::Store(StoreError::Locked(p)) => ServeError::Locked(p),
            e => ServeError::Api(e),
        }
    }
}

impl From<OaiError> for ServeError {
    fn from(e: OaiError) -> Self {
        match e {
            OaiError::Api(e) => e.into(),
            OaiError::Store(StoreError::Locked(p)) => ServeError::Locked(p),
            e => ServeError::Oai(e),
        }
    }
}

#[derive(Clone)]
struct AppState {
    repo: Arc<Repository>,
    oai: Arc<OaiProvider>,
    api_key: Option<Arc<str>>,
    addr: SocketAddr,
}

/// A running service on its own runtime thread.
pub struct ServiceHandle {
    addr: SocketAddr,
    repo: Arc<Repository>,
    oai: Arc<OaiProvider>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<io::Result<()>>>,
}

impl ServiceHandle {
    /// Binds `bind` (port 0 picks a free port) and starts serving.
    pub fn start(
        repo: Arc<Repository>,
        oai: Arc<OaiProvider>,
        bind: SocketAddr,
        api_key: Option<String>,
    ) -> Result<ServiceHandle, ServeError> {
        let listener = TcpListener::bind(bind).map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse => ServeError::PortInUse(bind.port()),
            _ => ServeError::Io(e),
        })?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let state = AppState {
            repo: repo.clone(),
            oai: oai.clone(),
            api_key: api_key.map(Arc::from),
            addr,
        };
        let (tx, rx) = oneshot::channel::<()>();
        let thread = std::thread::Builder::new().name("ino-http".into()).spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)?;
                let consumer = tokio::spawn(consume(state.oai.clone()));
                let result = axum::serve(listener, router(state))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
                consumer.abort();
                result
            })
        })?;
        Ok(ServiceHandle {
            addr,
            repo,
            oai,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `http://host:port` of the bound socket.
    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn oai_url(&self) -> String {
        format!("http://{}/oai", self.addr)
    }

    pub fn repo(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub fn oai(&self) -> &Arc<OaiProvider> {
        &self.oai
    }

    /// Drains in-flight requests, folds pending events into the OAI cache and
    /// flushes the journal, index snapshot and cache snapshot.
    pub fn stop(mut self) -> Result<(), ServeError> {
        self.halt()?;
        self.oai.sync()?;
        self.repo.persist()?;
        self.oai.persist()?;
        Ok(())
    }

    fn halt(&mut self) -> Result<(), ServeError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            t.join().map_err(|_| io::Error::other("http thread panicked"))??;
        }
        Ok(())
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        let _ = self.halt();
    }
}

async fn consume(oai: Arc<OaiProvider>) {
    let mut tick = tokio::time::interval(CONSUME_INTERVAL);
    loop {
        tick.tick().await;
        let oai = oai.clone();
        match tokio::task::spawn_blocking(move || oai.sync()).await {
            Ok(Err(e)) => tracing::warn!("oai cache sync failed: {e}"),
            Err(e) => tracing::warn!("oai cache sync panicked: {e}"),
            Ok(Ok(_)) => {}
        }
    }
}

/// Runs the service described by `config` until interrupted.
pub fn serve(config: &Config) -> Result<(), ServeError> {
    let (repo, oai) = crate::open_repository(config, StoreOptions::default(), Arc::new(SystemClock))?;
    let bind = SocketAddr::from(([0, 0, 0, 0], config.port));
    let handle = ServiceHandle::start(repo, oai, bind, config.api_key.clone())?;
    tracing::info!("serving {} on {}", config.data_dir.display(), handle.addr());
    tokio::runtime::Builder::new_current_thread().enable_all().build()?.block_on(shutdown_signal());
    tracing::info!("shutting down");
    handle.stop()
}

async fn shutdown_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        match signal(SignalKind::terminate()) {
            Ok(mut term) => {
                tokio::select! {
                    _ = tokio::signal::ctrl_c() => {}
                    _ = term.recv() => {}
                }
            }
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
            }
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}

fn router(state: AppState) -> Router {
    Router::new()
        .route("/objects/resource", post(add_resource))
        .route("/objects/metadata", post(add_metadata))
        .route("/objects/agent", post(add_agent))
        .route("/objects/aggregation", post(add_aggregation))
        .route("/aggregations/{id}/members", put(set_members))
        .route("/objects/{id}", get(get_object))
        .route("/objects/{id}/datastreams/{ds}", get(get_datastream))
        .route("/disseminations/{id}/{format}", get(get_dissemination))
        .route("/query", post(query))
        .route("/oai", get(oai_get).post(oai_post))
        .with_state(state)
}

#[derive(Debug)]
struct HttpError {
    status: StatusCode,
    message: String,
}

impl HttpError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        HttpError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        HttpError::new(StatusCode::BAD_REQUEST, message)
    }
}

impl IntoResponse for HttpError {
    fn into_response(self) -> Response {
        let error = match self.status {
            StatusCode::NOT_FOUND => "notFound",
            StatusCode::CONFLICT => "conflict",
            StatusCode::UNAUTHORIZED => "unauthorized",
            StatusCode::FORBIDDEN => "forbidden",
            s if s.is_server_error() => "internal",
            _ => "invalid",
        };
        (self.status, Json(json!({ "error": error, "message": self.message }))).into_response()
    }
}

impl From<ApiError> for HttpError {
    fn from(e: ApiError) -> Self {
        let status = match &e {
            ApiError::Store(StoreError::NotFound(_))
            | ApiError::Dissemination(DisseminationError::NotFound(_) | DisseminationError::FormatUnavailable { .. })
            | ApiError::UnknownAggregation(_)
            | ApiError::UnknownResource(_)
            | ApiError::UnknownAgent(_)
            | ApiError::UnknownMember(_)
            | ApiError::Invalid { field: "datastream", .. } => StatusCode::NOT_FOUND,
            ApiError::HasDependents { .. }
            | ApiError::Store(StoreError::DuplicateId(_))
            | ApiError::Ontology(OntologyError::CardinalityViolation { .. }) => StatusCode::CONFLICT,
            e if !e.is_rejection() => StatusCode::INTERNAL_SERVER_ERROR,
            _ => StatusCode::BAD_REQUEST,
        };
        HttpError::new(status, e.to_string())
    }
}

type HttpResult<T> = Result<T, HttpError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> HttpResult<T> + Send + 'static) -> HttpResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| HttpError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn authorize(state: &AppState, headers: &HeaderMap) -> HttpResult<()> {
    let Some(key) = &state.api_key else {
        return Err(HttpError::new(StatusCode::FORBIDDEN, "no apiKey is configured; mutations are disabled"));
    };
    match headers.get(KEY_HEADER).and_then(|v| v.to_str().ok()) {
        Some(given) if given == &**key => Ok(()),
        _ => Err(HttpError::new(StatusCode::UNAUTHORIZED, "missing or wrong X-INO-Key")),
    }
}

fn parse_id(s: &str) -> HttpResult<ObjectId> {
    ObjectId::parse_lenient(s).map_err(|e| HttpError::bad_request(format!("invalid object id `{}`", e.0)))
}

fn parse_ids(ids: &[String]) -> HttpResult<Vec<ObjectId>> {
    ids.iter().map(|s| parse_id(s)).collect()
}

fn created(id: ObjectId) -> Response {
    (StatusCode::CREATED, Json(json!({ "id": id.as_str() }))).into_response()
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ResourceRequest {
    pub url: Option<String>,
    /// Base64 inline content, exclusive with `url`.
    pub content: Option<String>,
    pub media_type: Option<String>,
    #[serde(default)]
    pub aggregations: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct MetadataRequest {
    pub target: String,
    pub format_id: String,
    pub payload: String,
    pub provider: Option<String>,
    #[serde(default)]
    pub aggregations: Vec<String>,
    pub source_record_id: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AgentRequest {
    pub name: String,
    pub kind: AgentKind,
    pub homepage: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct AggregationRequest {
    pub agent: String,
    pub proxy_url: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MembersRequest {
    pub members: Vec<String>,
}

fn json_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> HttpResult<T> {
    serde_json::from_slice(body).map_err(|e| HttpError::bad_request(format!("bad JSON body: {e}")))
}

async fn add_resource(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> HttpResult<Response> {
    authorize(&st, &headers)?;
    let req: ResourceRequest = json_body(&body)?;
    let content = match (req.url, req.content) {
        (Some(url), None) => ResourceContent::Url(url),
        (None, Some(b64)) => ResourceContent::Inline {
            bytes: base64::engine::general_purpose::STANDARD
                .decode(b64.trim())
                .map_err(|e| HttpError::bad_request(format!("content is not base64: {e}")))?,
            media_type: req.media_type.unwrap_or_else(|| "application/octet-stream".into()),
        },
        _ => return Err(HttpError::bad_request("exactly one of `url` and `content` is required")),
    };
    let spec = ResourceSpec {
        content,
        aggregations: parse_ids(&req.aggregations)?,
    };
    blocking(move || Ok(created(st.repo.add_resource(&spec)?))).await
}

async fn add_metadata(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> HttpResult<Response> {
    authorize(&st, &headers)?;
    let req: MetadataRequest = json_body(&body)?;
    let spec = MetadataSpec {
        target: parse_id(&req.target)?,
        format_id: req.format_id,
        payload: req.payload.into_bytes(),
        provider: req.provider.as_deref().map(parse_id).transpose()?,
        aggregations: parse_ids(&req.aggregations)?,
        source_record_id: req.source_record_id,
    };
    blocking(move || Ok(created(st.repo.add_metadata(&spec)?))).await
}

async fn add_agent(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> HttpResult<Response> {
    authorize(&st, &headers)?;
    let req: AgentRequest = json_body(&body)?;
    blocking(move || Ok(created(st.repo.add_agent_with_homepage(&req.name, req.kind, req.homepage.as_deref())?))).await
}

async fn add_aggregation(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> HttpResult<Response> {
    authorize(&st, &headers)?;
    let req: AggregationRequest = json_body(&body)?;
    let agent = parse_id(&req.agent)?;
    blocking(move || Ok(created(st.repo.create_aggregation(&agent, &ResourceSpec::url(&req.proxy_url))?))).await
}

#[derive(Serialize)]
struct DeltaBody {
    added: Vec<String>,
    removed: Vec<String>,
}

async fn set_members(
    State(st): State<AppState>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> HttpResult<Response> {
    authorize(&st, &headers)?;
    let agg = parse_id(&id)?;
    let req: MembersRequest = json_body(&body)?;
    let members = parse_ids(&req.members)?;
    blocking(move || {
        let delta = st.repo.set_aggregation_membership(&agg, &members)?;
        let ids = |v: Vec<ObjectId>| v.into_iter().map(|i| i.as_str().to_string()).collect();
        Ok(Json(DeltaBody {
            added: ids(delta.added),
            removed: ids(delta.removed),
        })
        .into_response())
    })
    .await
}

async fn get_object(State(st): State<AppState>, Path(id): Path<String>) -> HttpResult<Response> {
    let id = parse_id(&id)?;
    blocking(move || {
        st.repo.get_object(&id)?;
        let bytes = st.repo.store().object_file_bytes(&id).map_err(ApiError::from)?;
        Ok(([(header::CONTENT_TYPE, "text/xml; charset=utf-8")], bytes).into_response())
    })
    .await
}

async fn get_datastream(State(st): State<AppState>, Path((id, ds)): Path<(String, String)>) -> HttpResult<Response> {
    let id = parse_id(&id)?;
    blocking(move || {
        let d = st.repo.get_datastream(&id, &ds)?;
        Ok(match d.content {
            DatastreamContent::Inline(bytes) => ([(header::CONTENT_TYPE, d.media_type)], bytes).into_response(),
            DatastreamContent::Surrogate(url) => (StatusCode::SEE_OTHER, [(header::LOCATION, url)]).into_response(),
        })
    })
    .await
}

async fn get_dissemination(
    State(st): State<AppState>,
    Path((id, format)): Path<(String, String)>,
) -> HttpResult<Response> {
    let id = parse_id(&id)?;
    blocking(move || {
        let d = st.repo.get_dissemination(&id, &format)?;
        let path = match d.path {
            DisseminationPath::Literal => "literal",
            DisseminationPath::Transformed => "transformed",
        };
        Ok(([(header::CONTENT_TYPE, d.media_type), (header::HeaderName::from_static("x-ino-path"), path.into())], d.bytes)
            .into_response())
    })
    .await
}

fn term_json(t: &Term) -> serde_json::Value {
    match t {
        Term::Iri(v) => json!({ "type": "iri", "value": v }),
        Term::Literal(v) => json!({ "type": "literal", "value": v }),
    }
}

async fn query(State(st): State<AppState>, body: Bytes) -> HttpResult<Response> {
    let text = String::from_utf8(body.to_vec()).map_err(|_| HttpError::bad_request("query is not UTF-8"))?;
    blocking(move || {
        let sol = st.repo.query_text(&text)?;
        let rows: Vec<Vec<serde_json::Value>> = sol.rows.iter().map(|r| r.iter().map(term_json).collect()).collect();
        Ok(Json(json!({ "vars": sol.vars, "rows": rows })).into_response())
    })
    .await
}

fn oai_base(st: &AppState, headers: &HeaderMap) -> String {
    let host = headers
        .get(header::HOST)
        .and_then(|h| h.to_str().ok())
        .map(str::to_string)
        .unwrap_or_else(|| st.addr.to_string());
    format!("http://{host}/oai")
}

async fn oai_respond(st: AppState, base: String, params: Vec<(String, String)>) -> HttpResult<Response> {
    blocking(move || {
        let xml = st.oai.handle_request(&params, &base);
        Ok(([(header::CONTENT_TYPE, "text/xml; charset=utf-8")], xml).into_response())
    })
    .await
}

fn form_pairs(raw: &[u8]) -> Vec<(String, String)> {
    url::form_urlencoded::parse(raw).into_owned().collect()
}

async fn oai_get(State(st): State<AppState>, headers: HeaderMap, RawQuery(q): RawQuery) -> HttpResult<Response> {
    let base = oai_base(&st, &headers);
    oai_respond(st, base, form_pairs(q.unwrap_or_default().as_bytes())).await
}

async fn oai_post(State(st): State<AppState>, headers: HeaderMap, body: Bytes) -> HttpResult<Response> {
    let base = oai_base(&st, &headers);
    oai_respond(st, base, form_pairs(&body)).await
}
