//! The run configuration: one TOML or JSON document with a section per
//! subcommand. Unknown keys are rejected everywhere. Relative paths are
//! resolved against the working directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use rarespot_core::clustering::ClusteringConfig;
use rarespot_core::features::{FeatureKind, RcfConfig};
use rarespot_core::hyperopt::SearchSpace;
use rarespot_core::simulate::SyntheticSceneConfig;
use rarespot_core::surface::{Strategy, DEFAULT_RADIUS_M};

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gridify: Option<GridifyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub featurize: Option<FeaturizeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster: Option<ClusterCmdConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tune: Option<TuneConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<ExperimentConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub serve: Option<ServeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rce_demo: Option<RceDemoConfig>,
}

impl RunConfig {
    /// Parses `.json` files as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(anyhow::Error::from)
        } else {
            toml::from_str(&text).map_err(anyhow::Error::from)
        };
        parsed.with_context(|| format!("parsing config {}", path.display()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Stem for the written files.
    #[serde(default = "default_synth_name")]
    pub name: String,
    #[serde(default)]
    pub scene: SyntheticSceneConfig,
}

fn default_synth_name() -> String {
    "synthetic".into()
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            name: default_synth_name(),
            scene: SyntheticSceneConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridifyConfig {
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Colorstats,
    Rcf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeaturizeConfig {
    pub manifest: Option<PathBuf>,
    #[serde(default)]
    pub method: Method,
    #[serde(default)]
    pub rcf: RcfConfig,
    /// Z-score each column before writing.
    #[serde(default)]
    pub standardize: bool,
}

/// Where feature rows come from when the grid is not known from a raster.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSource {
    /// Scene manifest fixing grid geometry; otherwise taken from the CSV.
    pub manifest: Option<PathBuf>,
    /// Ground resolution used when no manifest is given.
    #[serde(default = "default_resolution")]
    pub resolution_m_per_px: f64,
    #[serde(default = "default_patch_px")]
    pub patch_size_px: usize,
}

impl Default for GridSource {
    fn default() -> Self {
        Self {
            manifest: None,
            resolution_m_per_px: default_resolution(),
            patch_size_px: default_patch_px(),
        }
    }
}

fn default_resolution() -> f64 {
    0.5
}

fn default_patch_px() -> usize {
    rarespot_core::grid::DEFAULT_PATCH_SIZE_PX
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterCmdConfig {
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub grid: GridSource,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub clustering: ClusteringConfig,
    /// Silhouette subsample size.
    #[serde(default = "default_sample_cap")]
    pub sample_cap: usize,
}

impl Default for ClusterCmdConfig {
    fn default() -> Self {
        Self {
            features: None,
            grid: GridSource::default(),
            standardize: true,
            clustering: ClusteringConfig::default(),
            sample_cap: default_sample_cap(),
        }
    }
}

fn yes() -> bool {
    true
}

fn default_sample_cap() -> usize {
    rarespot_core::clustering::DEFAULT_SAMPLE_CAP
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuneConfig {
    /// Feature CSV per featurizer.
    #[serde(default)]
    pub features: BTreeMap<FeatureKind, PathBuf>,
    #[serde(default)]
    pub grid: GridSource,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub search: SearchSpace,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            features: BTreeMap::new(),
            grid: GridSource::default(),
            standardize: true,
            search: SearchSpace::default(),
        }
    }
}

/// Labeled data for simulations: a synthetic scene, or files on disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataInputs {
    /// Ground truth CSV `row,col,label`.
    pub truth: PathBuf,
    #[serde(default)]
    pub features: BTreeMap<FeatureKind, PathBuf>,
    #[serde(default)]
    pub grid: GridSource,
    /// Precomputed cluster assignment CSV for the cluster strategies.
    pub cluster_model: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub scene: SyntheticSceneConfig,
    /// Replaces the synthetic scene when present.
    pub inputs: Option<DataInputs>,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default = "default_sweep_search")]
    pub search: SearchSpace,
    /// Positives to find per simulation.
    #[serde(default = "default_sweep_m")]
    pub m: usize,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: usize,
}

fn default_sweep_search() -> SearchSpace {
    SearchSpace {
        trials: 20,
        ..SearchSpace::default()
    }
}

fn default_sweep_m() -> usize {
    50
}

fn default_sweep_seeds() -> usize {
    10
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            scene: SyntheticSceneConfig::default(),
            inputs: None,
            standardize: false,
            search: default_sweep_search(),
            m: default_sweep_m(),
            seeds: default_sweep_seeds(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub scene: SyntheticSceneConfig,
    /// Replaces the synthetic scene when present.
    pub inputs: Option<DataInputs>,
    #[serde(default = "all_strategies")]
    pub strategies: Vec<Strategy>,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    /// Reweight increment; the initial surface maximum when absent.
    #[serde(default)]
    pub weight: Option<f64>,
    /// Used for the cluster strategies when no cluster model is supplied.
    #[serde(default)]
    pub clustering: ClusteringConfig,
    #[serde(default)]
    pub standardize: bool,
    #[serde(default)]
    pub seed: u64,
    /// Write one step log per (strategy, trial).
    #[serde(default = "yes")]
    pub session_logs: bool,
}

fn all_strategies() -> Vec<Strategy> {
    Strategy::ALL.to_vec()
}

fn default_budgets() -> Vec<usize> {
    vec![300, 950, 3000]
}

fn default_trials() -> usize {
    5
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS_M
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            scene: SyntheticSceneConfig::default(),
            inputs: None,
            strategies: all_strategies(),
            budgets: default_budgets(),
            trials: default_trials(),
            radius_m: default_radius(),
            weight: None,
            clustering: ClusteringConfig::default(),
            standardize: false,
            seed: 0,
            session_logs: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServeConfig {
    /// Falls back to the data-root environment variable, then `./data`.
    pub data_root: Option<PathBuf>,
    pub static_dir: Option<PathBuf>,
    #[serde(default = "default_host")]
    pub host: String,
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: usize,
}

fn default_host() -> String {
    "127.0.0.1".into()
}

fn default_port() -> u16 {
    8080
}

fn default_snapshot_every() -> usize {
    10
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            data_root: None,
            static_dir: None,
            host: default_host(),
            port: default_port(),
            snapshot_every: default_snapshot_every(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RceDemoConfig {
    #[serde(default = "default_pixels")]
    pub pixels: usize,
    #[serde(default = "default_classes")]
    pub classes: usize,
    /// Fraction of pixels carrying a label.
    #[serde(default = "default_labeled_fraction")]
    pub labeled_fraction: f64,
    #[serde(default = "default_logit_scale")]
    pub logit_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_pixels() -> usize {
    64
}

fn default_classes() -> usize {
    3
}

fn default_labeled_fraction() -> f64 {
    0.25
}

fn default_logit_scale() -> f64 {
    2.0
}

impl Default for RceDemoConfig {
    fn default() -> Self {
        Self {
            pixels: default_pixels(),
            classes: default_classes(),
            labeled_fraction: default_labeled_fraction(),
            logit_scale: default_logit_scale(),
            seed: 0,
        }
    }
}

impl RceDemoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.pixels == 0 || self.classes < 2 {
            bail!("rce demo needs at least one pixel and two classes");
        }
        if !(0.0..=1.0).contains(&self.labeled_fraction) {
            bail!("labeled_fraction must lie in [0, 1], got {}", self.labeled_fraction);
        }
        Ok(())
    }
}
