//! HTTP service for human labeling sessions over a prepared scene.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create a session from a [`SessionConfig`] |
//! | GET | `/sessions/{id}` | configuration, tallies, pending patch |
//! | GET | `/sessions/{id}/next` | the pending patch, drawing one if needed |
//! | POST | `/sessions/{id}/labels` | label the pending patch |
//! | GET | `/sessions/{id}/surface?max_dim=N` | pooled probability grid |
//! | GET | `/sessions/{id}/stats` | tallies |
//! | GET | `/tiles/{scene}/{row}/{col}.png` | patch tile |
//!
//! Errors are JSON `{"code", "message"}`.

mod error;
mod store;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex as StdMutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex;
use tower_http::services::ServeDir;

use rarespot_core::grid::{render_patch_png, GridSpec, PatchRef};
use rarespot_core::rng::RNG_ALGORITHM;
use rarespot_core::session::{Label, LabelSession, Pending, Tallies};
use rarespot_core::surface::{PooledSurface, Sampler};

pub use error::ApiError;
pub use store::{manifest_path, session_dir, LoadedScene, SessionConfig};

/// Environment variable naming the data root.
pub const DATA_ROOT_ENV: &str = "RARESPOT_DATA";

#[derive(Debug, Clone)]
pub struct ServiceOptions {
    pub data_root: PathBuf,
    /// Served at `/` for any path no API route claims.
    pub static_dir: Option<PathBuf>,
    /// Labels between snapshot rewrites.
    pub snapshot_every: usize,
}

impl ServiceOptions {
    pub fn new(data_root: impl Into<PathBuf>) -> Self {
        Self {
            data_root: data_root.into(),
            static_dir: None,
            snapshot_every: 10,
        }
    }

    /// Data root from the environment, else `./data`.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(DATA_ROOT_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from))
    }
}

struct SessionEntry {
    id: String,
    config: SessionConfig,
    dir: PathBuf,
    session: LabelSession,
    labels_since_snapshot: usize,
}

struct AppState {
    opts: ServiceOptions,
    sessions: StdMutex<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    scenes: StdMutex<HashMap<String, Arc<LoadedScene>>>,
}

type Shared = Arc<AppState>;

impl AppState {
    fn scene(&self, name: &str) -> Result<Arc<LoadedScene>, ApiError> {
        if let Some(s) = self.scenes.lock().expect("scene cache poisoned").get(name) {
            return Ok(s.clone());
        }
        let loaded = Arc::new(store::load_scene(&self.opts.data_root, name)?);
        self.scenes
            .lock()
            .expect("scene cache poisoned")
            .entry(name.to_string())
            .or_insert(loaded.clone());
        Ok(loaded)
    }

    fn sampler(&self, cfg: &SessionConfig) -> Result<Sampler, ApiError> {
        let scene = self.scene(&cfg.scene)?;
        store::build_sampler(&self.opts.data_root, cfg, &scene)
    }

    /// Looks up a session, restoring it from disk by replay if it is not in
    /// memory.
    fn entry(&self, id: &str) -> Result<Arc<Mutex<SessionEntry>>, ApiError> {
        if let Some(e) = self.sessions.lock().expect("session map poisoned").get(id) {
            return Ok(e.clone());
        }
        if uuid::Uuid::parse_str(id).is_err() {
            return Err(ApiError::not_found(format!("session `{id}`")));
        }
        let dir = session_dir(&self.opts.data_root, id);
        if !dir.join("config.json").is_file() {
            return Err(ApiError::not_found(format!("session `{id}`")));
        }
        let config = store::read_config(&dir)?;
        let session = store::replay_session(&dir, &config, self.sampler(&config)?)?;
        tracing::info!(session = id, steps = session.steps().len(), "restored session from log");
        let entry = Arc::new(Mutex::new(SessionEntry {
            id: id.to_string(),
            config,
            dir,
            session,
            labels_since_snapshot: 0,
        }));
        Ok(self
            .sessions
            .lock()
            .expect("session map poisoned")
            .entry(id.to_string())
            .or_insert(entry)
            .clone())
    }
}

pub fn router(opts: ServiceOptions) -> Router {
    let static_dir = opts.static_dir.clone();
    let state = Arc::new(AppState {
        opts,
        sessions: StdMutex::new(HashMap::new()),
        scenes: StdMutex::new(HashMap::new()),
    });
    let api = Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/next", get(next_patch))
        .route("/sessions/{id}/labels", post(submit_label))
        .route("/sessions/{id}/surface", get(surface))
        .route("/sessions/{id}/stats", get(stats))
        .route("/tiles/{scene}/{row}/{tile}", get(tile))
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such route") }),
    }
}

pub async fn serve(addr: SocketAddr, opts: ServiceOptions) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(%addr, root = %opts.data_root.display(), "listening");
    axum::serve(listener, router(opts)).await
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GridDims {
    pub rows: usize,
    pub cols: usize,
}

impl From<&GridSpec> for GridDims {
    fn from(g: &GridSpec) -> Self {
        Self {
            rows: g.rows,
            cols: g.cols,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub config: SessionConfig,
    pub rng: String,
    pub grid: GridDims,
    pub tallies: Tallies,
    pub pending: Option<Pending>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct NextPatch {
    pub step: usize,
    pub patch: PatchRef,
    pub tile_url: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelRequest {
    pub patch: PatchRef,
    pub label: Label,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct LabelResponse {
    pub step: usize,
    pub label: Label,
    /// Surface update triggered by this label, e.g. `proximity_boost:12`.
    pub update: Option<String>,
    pub tallies: Tallies,
}

#[derive(Debug, Deserialize)]
struct SurfaceQuery {
    max_dim: Option<usize>,
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    body.map(|Json(v)| v)
        .map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<SessionConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let config = json_body(body)?;
    let sampler = state.sampler(&config)?;
    let grid = *sampler.grid();
    let session = LabelSession::new(sampler, config.budget, config.seed)?;
    let id = uuid::Uuid::new_v4().to_string();
    let dir = session_dir(&state.opts.data_root, &id);
    store::create_session_files(&dir, &id, &config)?;
    store::write_snapshot(&dir, &session.snapshot())?;
    let view = SessionView {
        id: id.clone(),
        config: config.clone(),
        rng: RNG_ALGORITHM.to_string(),
        grid: (&grid).into(),
        tallies: session.tallies(),
        pending: None,
    };
    let entry = SessionEntry {
        id: id.clone(),
        config,
        dir,
        session,
        labels_since_snapshot: 0,
    };
    state
        .sessions
        .lock()
        .expect("session map poisoned")
        .insert(id.clone(), Arc::new(Mutex::new(entry)));
    tracing::info!(session = %id, "created session");
    Ok((StatusCode::CREATED, Json(view)))
}

fn view(entry: &SessionEntry) -> SessionView {
    SessionView {
        id: entry.id.clone(),
        config: entry.config.clone(),
        rng: RNG_ALGORITHM.to_string(),
        grid: entry.session.sampler().grid().into(),
        tallies: entry.session.tallies(),
        pending: entry.session.pending(),
    }
}

async fn get_session(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, ApiError> {
    let entry = state.entry(&id)?;
    let entry = entry.lock().await;
    Ok(Json(view(&entry)))
}

async fn next_patch(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<NextPatch>, ApiError> {
    let entry = state.entry(&id)?;
    let mut entry = entry.lock().await;
    let backup = entry.session.clone();
    let (pending, event) = entry.session.next()?;
    if let Some(event) = event {
        if let Err(e) = store::append_event(&entry.dir, &event) {
            entry.session = backup;
            return Err(e);
        }
    }
    Ok(Json(NextPatch {
        step: pending.step,
        patch: pending.patch,
        tile_url: format!(
            "/tiles/{}/{}/{}.png",
            entry.config.scene, pending.patch.row, pending.patch.col
        ),
    }))
}

async fn submit_label(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<LabelRequest>, JsonRejection>,
) -> Result<Json<LabelResponse>, ApiError> {
    let req = json_body(body)?;
    let entry = state.entry(&id)?;
    let mut entry = entry.lock().await;
    entry.session.sampler().grid().check(req.patch)?;
    let backup = entry.session.clone();
    let (step, event) = entry.session.submit(req.patch, req.label)?;
    if let Err(e) = store::append_event(&entry.dir, &event) {
        entry.session = backup;
        return Err(e);
    }
    entry.labels_since_snapshot += 1;
    let done = entry.session.tallies().remaining == 0;
    if entry.labels_since_snapshot >= state.opts.snapshot_every.max(1) || done {
        if let Err(e) = store::write_snapshot(&entry.dir, &entry.session.snapshot()) {
            tracing::warn!(session = %entry.id, error = %e, "snapshot write failed");
        } else {
            entry.labels_since_snapshot = 0;
        }
    }
    Ok(Json(LabelResponse {
        step: step.step,
        label: step.label,
        update: step.update.map(|u| u.to_string()),
        tallies: entry.session.tallies(),
    }))
}

async fn surface(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<SurfaceQuery>, QueryRejection>,
) -> Result<Json<PooledSurface>, ApiError> {
    let Query(q) = query.map_err(|e| ApiError::bad_request(e.body_text()))?;
    let entry = state.entry(&id)?;
    let entry = entry.lock().await;
    let surface = entry.session.sampler().surface();
    let max_dim = match q.max_dim {
        Some(0) => return Err(ApiError::bad_request("max_dim must be at least 1")),
        Some(m) => m,
        None => surface.rows().max(surface.cols()),
    };
    Ok(Json(surface.pooled(max_dim)))
}

async fn stats(
    State(state): State<Shared>,
    Path(id): Path<String>,
) -> Result<Json<Tallies>, ApiError> {
    let entry = state.entry(&id)?;
    let entry = entry.lock().await;
    Ok(Json(entry.session.tallies()))
}

async fn tile(
    State(state): State<Shared>,
    Path((scene, row, tile)): Path<(String, usize, String)>,
) -> Result<Response, ApiError> {
    let col = tile
        .strip_suffix(".png")
        .and_then(|c| c.parse::<usize>().ok())
        .ok_or_else(|| ApiError::not_found(format!("tile `{tile}`")))?;
    let loaded = state.scene(&scene)?;
    let patch = PatchRef::new(row, col);
    let png = render_patch_png(
        &loaded.raster,
        &loaded.grid,
        patch,
        loaded.band_mapping,
        loaded.stretch,
    )?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}
