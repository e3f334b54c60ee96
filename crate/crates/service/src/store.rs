//! On-disk layout under the data root:
//!
//! ```text
//! scenes/<name>.scene.json      scene manifest
//! sessions/<id>/config.json     creation request
//! sessions/<id>/events.jsonl    append-only event log
//! sessions/<id>/snapshot.json   latest periodic snapshot (informational)
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, Write};
use std::path::{Component, Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use rarespot_core::clustering::{ClusterModel, ClusterSummary};
use rarespot_core::grid::{default_band_mapping, minmax_stretch, GridSpec, RasterScene, SceneManifest};
use rarespot_core::rng::RNG_ALGORITHM;
use rarespot_core::session::{read_events, write_event, LabelSession, SessionEvent, SessionSnapshot};
use rarespot_core::surface::{Sampler, StrategyConfig};

use crate::error::ApiError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    /// Scene name, resolved to `scenes/<name>.scene.json`.
    pub scene: String,
    pub strategy: StrategyConfig,
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
    /// Cluster assignment CSV, relative to the data root.
    #[serde(default)]
    pub cluster_model: Option<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StoredConfig {
    id: String,
    rng: String,
    config: SessionConfig,
}

/// A scene ready for tile rendering.
#[derive(Debug)]
pub struct LoadedScene {
    pub raster: RasterScene,
    pub grid: GridSpec,
    pub band_mapping: [usize; 3],
    pub stretch: (f32, f32),
}

pub fn valid_name(name: &str) -> bool {
    !name.is_empty()
        && name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn manifest_path(root: &Path, scene: &str) -> PathBuf {
    root.join("scenes").join(format!("{scene}.scene.json"))
}

pub fn session_dir(root: &Path, id: &str) -> PathBuf {
    root.join("sessions").join(id)
}

pub fn load_scene(root: &Path, name: &str) -> Result<LoadedScene, ApiError> {
    if !valid_name(name) {
        return Err(ApiError::bad_request(format!("invalid scene name `{name}`")));
    }
    let path = manifest_path(root, name);
    if !path.is_file() {
        return Err(ApiError::not_found(format!("scene `{name}`")));
    }
    let (raster, grid) = SceneManifest::read(&path)?.load()?;
    let band_mapping = default_band_mapping(raster.bands());
    let stretch = minmax_stretch(&raster, band_mapping);
    Ok(LoadedScene {
        raster,
        grid,
        band_mapping,
        stretch,
    })
}

fn relative_to_root(root: &Path, rel: &Path) -> Result<PathBuf, ApiError> {
    if rel
        .components()
        .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
    {
        return Err(ApiError::bad_request(format!(
            "path `{}` must be relative to the data root",
            rel.display()
        )));
    }
    Ok(root.join(rel))
}

fn load_cluster_model(root: &Path, rel: &Path, grid: &GridSpec) -> Result<ClusterModel, ApiError> {
    let path = relative_to_root(root, rel)?;
    let file = File::open(&path).map_err(|_| {
        ApiError::new(
            axum::http::StatusCode::UNPROCESSABLE_ENTITY,
            "unresolvable_reference",
            format!("cluster model `{}` not found", rel.display()),
        )
    })?;
    let summary_path = path.with_extension("json");
    let noise_label = match fs::read_to_string(&summary_path) {
        Ok(text) => serde_json::from_str::<ClusterSummary>(&text)
            .map_err(|e| ApiError::bad_request(format!("cluster summary: {e}")))?
            .noise_label,
        Err(_) => None,
    };
    Ok(ClusterModel::read_csv(BufReader::new(file), grid, noise_label)?)
}

/// Validates a configuration and builds its initial sampler.
pub fn build_sampler(root: &Path, cfg: &SessionConfig, scene: &LoadedScene) -> Result<Sampler, ApiError> {
    if cfg.budget == 0 {
        return Err(ApiError::bad_request("budget must be at least 1"));
    }
    cfg.strategy.validate()?;
    let model = match (&cfg.cluster_model, cfg.strategy.strategy.needs_clusters()) {
        (Some(rel), true) => Some(Arc::new(load_cluster_model(root, rel, &scene.grid)?)),
        (None, true) => {
            return Err(ApiError::bad_request(format!(
                "strategy {} requires a cluster_model",
                cfg.strategy.strategy
            )))
        }
        (_, false) => None,
    };
    Ok(Sampler::new(cfg.strategy.clone(), scene.grid, model)?)
}

fn io_err(path: &Path, e: std::io::Error) -> ApiError {
    ApiError::internal(format!("{}: {e}", path.display()))
}

/// Writes `bytes` to a sibling temp file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ApiError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| io_err(&tmp, e))?;
    f.write_all(bytes).map_err(|e| io_err(&tmp, e))?;
    f.sync_all().map_err(|e| io_err(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

pub fn create_session_files(dir: &Path, id: &str, cfg: &SessionConfig) -> Result<(), ApiError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let stored = StoredConfig {
        id: id.to_string(),
        rng: RNG_ALGORITHM.to_string(),
        config: cfg.clone(),
    };
    let text = serde_json::to_vec_pretty(&stored).map_err(|e| ApiError::internal(e.to_string()))?;
    write_atomic(&dir.join("config.json"), &text)?;
    let events = dir.join("events.jsonl");
    File::create(&events).map_err(|e| io_err(&events, e))?;
    Ok(())
}

/// Appends one event and syncs it to disk.
pub fn append_event(dir: &Path, event: &SessionEvent) -> Result<(), ApiError> {
    let path = dir.join("events.jsonl");
    let mut f = OpenOptions::new()
        .append(true)
        .open(&path)
        .map_err(|e| io_err(&path, e))?;
    write_event(&mut f, event).map_err(|e| ApiError::internal(e.to_string()))?;
    f.sync_data().map_err(|e| io_err(&path, e))
}

pub fn write_snapshot(dir: &Path, snapshot: &SessionSnapshot) -> Result<(), ApiError> {
    let text = serde_json::to_vec(snapshot).map_err(|e| ApiError::internal(e.to_string()))?;
    write_atomic(&dir.join("snapshot.json"), &text)
}

pub fn read_config(dir: &Path) -> Result<SessionConfig, ApiError> {
    let path = dir.join("config.json");
    let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let stored: StoredConfig =
        serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))?;
    if stored.rng != RNG_ALGORITHM {
        return Err(ApiError::internal(format!(
            "session was recorded with rng `{}`, this build uses `{RNG_ALGORITHM}`",
            stored.rng
        )));
    }
    Ok(stored.config)
}

/// Rebuilds a session from its initial state and event log.
pub fn replay_session(
    dir: &Path,
    cfg: &SessionConfig,
    sampler: Sampler,
) -> Result<LabelSession, ApiError> {
    let path = dir.join("events.jsonl");
    let file = File::open(&path).map_err(|e| io_err(&path, e))?;
    let events = read_events(BufReader::new(file))?;
    Ok(LabelSession::replay(sampler, cfg.budget, cfg.seed, &events)?)
}
