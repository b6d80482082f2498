//! HTTP session service for the interactive workflow: upload a content and
//! a style image, propose masks from prompts, commit mask pairs, stylize.
//!
//! Each session sits behind its own `RwLock`. Tokio's lock is fair, so
//! mutations on one session run in arrival order, mask proposals share the
//! read side, and different sessions never contend.

mod error;
mod session;
mod store;

use std::collections::HashMap;
use std::future::Future;
use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use regionstyle::mask::rle_encode;
use regionstyle::segment::{segment, RemoteSegmenter};
use regionstyle::{stylize, Image, MaskPair, ModelParams, PromptSet, Rle, SegmenterConfig};
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::RwLock;

pub use error::ApiError;
pub use session::{StyleSession, StylizeResult};
pub use store::Store;

pub const MAX_BODY_BYTES: usize = 64 << 20;

/// Runtime configuration, normally filled from flags or `REGIONSTYLE_*`
/// environment variables.
#[derive(Debug, Clone)]
pub struct Config {
    pub port: u16,
    pub weights: PathBuf,
    pub segment_url: Option<String>,
    pub data_dir: Option<PathBuf>,
}

type SessionHandle = Arc<RwLock<StyleSession>>;

pub struct AppState {
    model: Arc<ModelParams>,
    segmenter: SegmenterConfig,
    remote: Option<RemoteSegmenter>,
    store: Option<Store>,
    sessions: RwLock<HashMap<String, SessionHandle>>,
}

impl AppState {
    pub fn new(model: ModelParams) -> Self {
        Self {
            model: Arc::new(model),
            segmenter: SegmenterConfig::default(),
            remote: None,
            store: None,
            sessions: RwLock::new(HashMap::new()),
        }
    }

    pub fn with_remote(mut self, remote: RemoteSegmenter) -> Self {
        self.remote = Some(remote);
        self
    }

    /// Persists sessions under `dir` and re-hydrates the ones already there.
    pub fn with_store(mut self, dir: impl Into<PathBuf>) -> io::Result<Self> {
        let store = Store::open(dir)?;
        let loaded = store.load_all()?;
        log::info!("restored {} session(s) from {}", loaded.len(), store.root().display());
        self.sessions = RwLock::new(
            loaded
                .into_iter()
                .map(|s| (s.id.clone(), Arc::new(RwLock::new(s))))
                .collect(),
        );
        self.store = Some(store);
        Ok(self)
    }

    /// Builds the state described by `config`: loads the weights, wires the
    /// remote segmenter and the store.
    pub fn from_config(config: &Config) -> Result<Self, regionstyle::Error> {
        let model = regionstyle::load_weights(&config.weights)?;
        let mut state = Self::new(model);
        if let Some(url) = &config.segment_url {
            state = state.with_remote(RemoteSegmenter::new(url.clone()));
        }
        if let Some(dir) = &config.data_dir {
            state = state.with_store(dir)?;
        }
        Ok(state)
    }

    async fn session(&self, id: &str) -> Result<SessionHandle, ApiError> {
        self.sessions
            .read()
            .await
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    async fn persist(&self, session: &StyleSession, image: Option<(&'static str, Bytes)>) -> Result<(), ApiError> {
        let Some(store) = self.store.clone() else {
            return Ok(());
        };
        let session = session.clone();
        blocking(move || {
            if let Some((role, bytes)) = image {
                store.save_image(&session.id, role, &bytes)?;
            }
            store.save_manifest(&session)
        })
        .await?
        .map_err(|e| ApiError::internal(format!("persisting session: {e}")))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/images/{role}", put(put_image))
        .route("/sessions/{id}/masks/{role}", post(propose_mask))
        .route("/sessions/{id}/pairs", post(commit_pair))
        .route("/sessions/{id}/pairs/{index}", delete(remove_pair))
        .route("/sessions/{id}/stylize", post(run_stylize))
        .route("/sessions/{id}/result", get(get_result))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(listener: TcpListener, state: Arc<AppState>, shutdown: impl Future<Output = ()> + Send + 'static) -> io::Result<()> {
    axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Content,
    Style,
}

impl Role {
    fn parse(s: &str) -> Result<Self, ApiError> {
        match s {
            "content" => Ok(Role::Content),
            "style" => Ok(Role::Style),
            _ => Err(ApiError::new(StatusCode::BAD_REQUEST, "BadRole", format!("role must be content or style, got {s:?}"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Role::Content => "content",
            Role::Style => "style",
        }
    }

    fn image(self, s: &StyleSession) -> Option<&Image> {
        match self {
            Role::Content => s.content.as_ref(),
            Role::Style => s.style.as_ref(),
        }
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("malformed JSON: {e}")))
}

async fn healthz() -> Json<Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(state): State<Arc<AppState>>) -> Result<(StatusCode, Json<Value>), ApiError> {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let session = StyleSession::new(id.clone());
    state.persist(&session, None).await?;
    state.sessions.write().await.insert(id.clone(), Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, Json(json!({ "id": id }))))
}

async fn get_session(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.read().await;
    let dims = |img: &Option<Image>| img.as_ref().map(|i| json!({ "h": i.height(), "w": i.width() }));
    Ok(Json(json!({
        "id": s.id,
        "content": dims(&s.content),
        "style": dims(&s.style),
        "pairs": s.pairs.len(),
        "result": s.last_result.as_ref().map(|r| r.state.clone()),
        "created": s.created,
        "updated": s.updated,
    })))
}

async fn put_image(
    State(state): State<Arc<AppState>>,
    Path((id, role)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let role = Role::parse(&role)?;
    let handle = state.session(&id).await?;
    let bytes = body.clone();
    let image = blocking(move || Image::from_png_bytes(&bytes)).await??;
    let mut s = handle.write().await;
    let (h, w) = (image.height(), image.width());
    let replaced = role.image(&s).is_some();
    match role {
        Role::Content => s.content = Some(image),
        Role::Style => s.style = Some(image),
    }
    let pairs_cleared = replaced && !s.pairs.is_empty();
    if pairs_cleared {
        s.pairs.clear();
    }
    s.touch();
    state.persist(&s, Some((role.name(), body))).await?;
    Ok(Json(json!({ "h": h, "w": w, "pairs_cleared": pairs_cleared })))
}

async fn propose_mask(
    State(state): State<Arc<AppState>>,
    Path((id, role)): Path<(String, String)>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let role = Role::parse(&role)?;
    let prompts: PromptSet = parse_json(&body)?;
    let handle = state.session(&id).await?;
    let image = {
        let s = handle.read().await;
        role.image(&s)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("session {id} has no {} image", role.name())))?
    };
    prompts.validate(image.height(), image.width())?;
    let remote = state.remote.clone().filter(|_| prompts.contour.is_none());
    let cfg = state.segmenter;
    let (mask, warnings) = blocking(move || match remote {
        Some(remote) => remote.remote_segment(&image, &prompts).map(|m| (m, Vec::new())),
        None => segment(&image, &prompts, &cfg).map(|s| (s.mask, s.warnings)),
    })
    .await??;
    let mut out = serde_json::to_value(rle_encode(&mask)).map_err(|e| ApiError::internal(e.to_string()))?;
    if !warnings.is_empty() {
        out["warnings"] = json!(warnings);
    }
    Ok(Json(out))
}

#[derive(Deserialize)]
struct PairBody {
    content: Rle,
    style: Rle,
}

async fn commit_pair(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<Value>, ApiError> {
    let pair: PairBody = parse_json(&body)?;
    let handle = state.session(&id).await?;
    let content = pair.content.decode()?;
    let style = pair.style.decode()?;
    let mut s = handle.write().await;
    for (role, mask) in [(Role::Content, &content), (Role::Style, &style)] {
        let img = role
            .image(&s)
            .ok_or_else(|| ApiError::not_found(format!("session {id} has no {} image", role.name())))?;
        if (img.height(), img.width()) != (mask.height(), mask.width()) {
            return Err(ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "DimMismatch",
                format!(
                    "{} mask is {}x{}, image is {}x{}",
                    role.name(),
                    mask.height(),
                    mask.width(),
                    img.height(),
                    img.width()
                ),
            ));
        }
    }
    let index = s.pairs.push(MaskPair::new(content, style));
    s.touch();
    state.persist(&s, None).await?;
    Ok(Json(json!({ "index": index })))
}

async fn remove_pair(
    State(state): State<Arc<AppState>>,
    Path((id, index)): Path<(String, String)>,
) -> Result<Json<Value>, ApiError> {
    let handle = state.session(&id).await?;
    let mut s = handle.write().await;
    let len = s.pairs.len();
    let bad_index = || ApiError::new(StatusCode::NOT_FOUND, "BadIndex", format!("no pair {index} (have {len})"));
    let i: usize = index.parse().map_err(|_| bad_index())?;
    s.pairs.remove(i).ok_or_else(bad_index)?;
    s.touch();
    state.persist(&s, None).await?;
    Ok(Json(json!({ "removed": i, "pairs": s.pairs.len() })))
}

async fn run_stylize(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let handle = state.session(&id).await?;
    let mut s = handle.write().await;
    let hash = s.state_hash();
    let reference = |hash: &str| json!({ "result": format!("/sessions/{id}/result?state={hash}"), "state": hash });
    if s.last_result.as_ref().is_some_and(|r| r.state == hash) {
        return Ok(Json(reference(&hash)));
    }
    let (Some(content), Some(style)) = (s.content.clone(), s.style.clone()) else {
        return Err(ApiError::not_found(format!("session {id} needs both images before stylizing")));
    };
    let pairs = s.pairs.clone();
    let model = state.model.clone();
    let png = blocking(move || stylize(&content, &style, &pairs, &model).map(|img| img.to_png_bytes())).await??;
    s.last_result = Some(StylizeResult {
        state: hash.clone(),
        png: Arc::new(png),
    });
    Ok(Json(reference(&hash)))
}

async fn get_result(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let handle = state.session(&id).await?;
    let s = handle.read().await;
    let result = s
        .last_result
        .clone()
        .ok_or_else(|| ApiError::not_found(format!("session {id} has no result yet")))?;
    Ok((
        [
            (header::CONTENT_TYPE, "image/png".to_owned()),
            (header::HeaderName::from_static("x-regionstyle-state"), result.state),
        ],
        result.png.as_ref().clone(),
    )
        .into_response())
}
