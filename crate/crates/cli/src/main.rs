//! `rarespot`: synthetic scenes, featurization, clustering, model search,
//! sampling experiments and the labeling service from one binary.

mod commands;
mod config;

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use config::{Method, RunConfig};
use rarespot_core::clustering::Algorithm;
use rarespot_core::features::FeatureKind;

#[derive(Debug, Parser)]
#[command(name = "rarespot", version, about)]
struct Cli {
    /// TOML or JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed of the selected subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic scene.
    Synth {
        #[arg(long)]
        name: Option<String>,
        #[arg(long)]
        rows: Option<usize>,
        #[arg(long)]
        cols: Option<usize>,
        /// Also render a raster and write a scene manifest.
        #[arg(long)]
        render: bool,
    },
    /// Lay the patch grid over a scene and list its cells.
    Gridify {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Compute one feature vector per patch.
    Featurize {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        standardize: bool,
    },
    /// Cluster a feature CSV.
    Cluster {
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// kmeans, bisecting_kmeans or dbscan.
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_neighbors: Option<usize>,
    },
    /// Search featurizer and clustering settings for the smallest |silhouette|.
    Tune {
        /// `KIND=PATH`, repeatable; KIND is rcf, colorstats or external.
        #[arg(long = "features", value_parser = parse_feature_arg)]
        features: Vec<(FeatureKind, PathBuf)>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Correlate |silhouette| with simulated sampling cost across a search.
    Sweep {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        seeds: Option<usize>,
    },
    /// Compare sampling strategies across labeling budgets.
    Experiment {
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        budgets: Option<Vec<usize>>,
    },
    /// Run the labeling service.
    Serve {
        #[arg(long)]
        data_root: Option<PathBuf>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
    },
    /// Evaluate the combined cross-entropy/entropy loss on a random batch.
    RceDemo {
        #[arg(long)]
        pixels: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        labeled_fraction: Option<f64>,
    },
}

fn parse_feature_arg(s: &str) -> Result<(FeatureKind, PathBuf), String> {
    let (kind, path) = s
        .split_once('=')
        .ok_or_else(|| format!("expected KIND=PATH, got `{s}`"))?;
    Ok((kind.parse().map_err(|e| format!("{e}"))?, PathBuf::from(path)))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let file = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = cli.out.clone();
    let seed = cli.seed;
    let mut echo = RunConfig::default();

    match cli.command {
        Command::Synth { name, rows, cols, render } => {
            let mut cfg = file.synth.unwrap_or_default();
            set(&mut cfg.name, name);
            set(&mut cfg.scene.rows, rows);
            set(&mut cfg.scene.cols, cols);
            cfg.scene.render |= render;
            set(&mut cfg.scene.seed, seed);
            echo.synth = Some(cfg.clone());
            start(&out, &echo)?;
            commands::synth(&cfg, &out)
        }
        Command::Gridify { manifest } => {
            let mut cfg = file.gridify.unwrap_or_default();
            set_opt(&mut cfg.manifest, manifest);
            echo.gridify = Some(cfg.clone());
            start(&out, &echo)?;
            commands::gridify(&cfg, &out)
        }
        Command::Featurize { manifest, method, standardize } => {
            let mut cfg = file.featurize.unwrap_or_default();
            set_opt(&mut cfg.manifest, manifest);
            set(&mut cfg.method, method);
            cfg.standardize |= standardize;
            set(&mut cfg.rcf.seed, seed);
            echo.featurize = Some(cfg.clone());
            start(&out, &echo)?;
            commands::featurize(&cfg, &out)
        }
        Command::Cluster { features, manifest, algorithm, k, eps, min_neighbors } => {
            let mut cfg = file.cluster.unwrap_or_default();
            set_opt(&mut cfg.features, features);
            set_opt(&mut cfg.grid.manifest, manifest);
            set(&mut cfg.clustering.algorithm, algorithm);
            set(&mut cfg.clustering.k, k);
            set(&mut cfg.clustering.eps, eps);
            set(&mut cfg.clustering.min_neighbors, min_neighbors);
            set(&mut cfg.clustering.seed, seed);
            echo.cluster = Some(cfg.clone());
            start(&out, &echo)?;
            commands::cluster(&cfg, &out)
        }
        Command::Tune { features, manifest, trials } => {
            let mut cfg = file.tune.unwrap_or_default();
            cfg.features.extend(features);
            set_opt(&mut cfg.grid.manifest, manifest);
            set(&mut cfg.search.trials, trials);
            set(&mut cfg.search.seed, seed);
            echo.tune = Some(cfg.clone());
            start(&out, &echo)?;
            commands::tune(&cfg, &out)
        }
        Command::Sweep { trials, m, seeds } => {
            let mut cfg = file.sweep.unwrap_or_default();
            set(&mut cfg.search.trials, trials);
            set(&mut cfg.m, m);
            set(&mut cfg.seeds, seeds);
            set(&mut cfg.search.seed, seed);
            set(&mut cfg.scene.seed, seed);
            echo.sweep = Some(cfg.clone());
            start(&out, &echo)?;
            commands::sweep(&cfg, &out)
        }
        Command::Experiment { trials, budgets } => {
            let mut cfg = file.experiment.unwrap_or_default();
            set(&mut cfg.trials, trials);
            set(&mut cfg.budgets, budgets);
            set(&mut cfg.seed, seed);
            set(&mut cfg.scene.seed, seed);
            set(&mut cfg.clustering.seed, seed);
            echo.experiment = Some(cfg.clone());
            start(&out, &echo)?;
            commands::experiment(&cfg, &out)
        }
        Command::Serve { data_root, static_dir, host, port } => {
            let mut cfg = file.serve.unwrap_or_default();
            set_opt(&mut cfg.data_root, data_root);
            set_opt(&mut cfg.static_dir, static_dir);
            set(&mut cfg.host, host);
            set(&mut cfg.port, port);
            if seed.is_some() {
                bail!("serve takes no seed; sessions carry their own");
            }
            echo.serve = Some(cfg.clone());
            start(&out, &echo)?;
            commands::serve(&cfg)
        }
        Command::RceDemo { pixels, classes, labeled_fraction } => {
            let mut cfg = file.rce_demo.unwrap_or_default();
            set(&mut cfg.pixels, pixels);
            set(&mut cfg.classes, classes);
            set(&mut cfg.labeled_fraction, labeled_fraction);
            set(&mut cfg.seed, seed);
            echo.rce_demo = Some(cfg.clone());
            start(&out, &echo)?;
            commands::rce_demo(&cfg, &out)
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_opt<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

/// Creates the output directory and echoes the resolved configuration.
fn start(out: &std::path::Path, resolved: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let path = out.join("run_config.json");
    let text = serde_json::to_string_pretty(resolved)?;
    std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
}
