use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use serde_json::json;

use rarespot_core::clustering::{cluster as fit, silhouette, ClusterModel};
use rarespot_core::features::{
    csv_grid_dims, featurize_scene, import_features, standardize, FeatureMatrix, Featurizer,
};
use rarespot_core::grid::{write_rawf32, GridSpec, SceneFormat, SceneManifest};
use rarespot_core::hyperopt::{refit, sweep_correlation, tune as search, write_trial_log, FeatureSet};
use rarespot_core::rce::{rce_gradient, rce_loss, RceBatch};
use rarespot_core::rng::seeded;
use rarespot_core::simulate::{generate_synthetic, run_experiment, ExperimentArm, GroundTruth, SyntheticSceneConfig};
use rarespot_core::surface::{Sampler, StrategyConfig};
use rarespot_service::ServiceOptions;

use crate::config::{
    ClusterCmdConfig, DataInputs, ExperimentConfig, FeaturizeConfig, GridSource, GridifyConfig, Method,
    RceDemoConfig, ServeConfig, SweepConfig, SynthConfig, TuneConfig,
};

fn create(out: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = out.join(name);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_json<T: Serialize>(out: &Path, name: &str, value: &T) -> Result<()> {
    let mut w = create(out, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| anyhow!("no {what} given (flag or config file)"))
}

fn load_manifest(path: &Path) -> Result<(rarespot_core::grid::RasterScene, GridSpec)> {
    SceneManifest::read(path)
        .and_then(|m| m.load())
        .with_context(|| format!("loading scene manifest {}", path.display()))
}

/// Grid for a cell-indexed CSV: from the manifest if given, else from the
/// largest indices in the file.
fn resolve_grid(src: &GridSource, csv: &Path) -> Result<GridSpec> {
    match &src.manifest {
        Some(m) => Ok(load_manifest(m)?.1),
        None => {
            let (rows, cols) =
                csv_grid_dims(csv).with_context(|| format!("reading {}", csv.display()))?;
            Ok(GridSpec::new(rows, cols, src.patch_size_px, src.resolution_m_per_px)?)
        }
    }
}

fn load_features(path: &Path, grid: &GridSpec, zscore: bool) -> Result<FeatureMatrix> {
    let f = import_features(path, grid).with_context(|| format!("importing {}", path.display()))?;
    Ok(if zscore { standardize(&f) } else { f })
}

fn load_feature_set(
    paths: &BTreeMap<rarespot_core::features::FeatureKind, PathBuf>,
    grid: &GridSpec,
    zscore: bool,
) -> Result<FeatureSet> {
    paths
        .iter()
        .map(|(kind, path)| Ok((*kind, load_features(path, grid, zscore)?)))
        .collect()
}

fn write_model(model: &ClusterModel, grid: &GridSpec, out: &Path, stem: &str) -> Result<()> {
    let mut w = create(out, &format!("{stem}.csv"))?;
    model.write_csv(grid, &mut w)?;
    w.flush()?;
    // Sibling summary, read back for the noise label.
    write_json(out, &format!("{stem}.json"), &model.summary())
}

pub fn synth(cfg: &SynthConfig, out: &Path) -> Result<()> {
    let scene = generate_synthetic(&cfg.scene)?;
    let name = &cfg.name;
    let mut w = create(out, &format!("{name}_features.csv"))?;
    scene.features.write_csv(&scene.grid, &mut w)?;
    w.flush()?;
    let mut w = create(out, &format!("{name}_truth.csv"))?;
    scene.truth.write_csv(&mut w)?;
    w.flush()?;
    if let Some(raster) = &scene.raster {
        write_rawf32(raster, &out.join(format!("{name}.f32")))?;
        let manifest = SceneManifest {
            scene_path: PathBuf::from(format!("{name}.f32")),
            format: SceneFormat::Rawf32,
            patch_size_px: cfg.scene.render_patch_px,
        };
        write_json(out, &format!("{name}.scene.json"), &manifest)?;
    }
    println!(
        "{}x{} grid, {} positives, written to {}",
        scene.grid.rows,
        scene.grid.cols,
        scene.truth.positives(),
        out.display()
    );
    Ok(())
}

pub fn gridify(cfg: &GridifyConfig, out: &Path) -> Result<()> {
    let (raster, grid) = load_manifest(require(&cfg.manifest, "scene manifest")?)?;
    write_json(out, "grid.json", &grid)?;
    let mut w = csv::Writer::from_writer(create(out, "cells.csv")?);
    w.write_record(["row", "col", "x_px", "y_px"])?;
    for id in 0..grid.len() {
        let p = grid.patch(id);
        w.write_record([
            p.row.to_string(),
            p.col.to_string(),
            (p.col * grid.patch_size_px).to_string(),
            (p.row * grid.patch_size_px).to_string(),
        ])?;
    }
    w.flush()?;
    println!(
        "{}x{} px raster -> {}x{} grid of {} px patches ({} m)",
        raster.width_px(),
        raster.height_px(),
        grid.rows,
        grid.cols,
        grid.patch_size_px,
        grid.patch_ground_m()
    );
    Ok(())
}

pub fn featurize(cfg: &FeaturizeConfig, out: &Path) -> Result<()> {
    let (raster, grid) = load_manifest(require(&cfg.manifest, "scene manifest")?)?;
    let (method, name) = match cfg.method {
        Method::Colorstats => (Featurizer::Colorstats, "features_colorstats.csv"),
        Method::Rcf => (Featurizer::Rcf(cfg.rcf.clone()), "features_rcf.csv"),
    };
    let mut features = featurize_scene(&raster, &grid, &method)?;
    if cfg.standardize {
        features = standardize(&features);
    }
    let mut w = create(out, name)?;
    features.write_csv(&grid, &mut w)?;
    w.flush()?;
    println!("{} patches x {} features -> {}", features.n(), features.d(), out.join(name).display());
    Ok(())
}

pub fn cluster(cfg: &ClusterCmdConfig, out: &Path) -> Result<()> {
    let path = require(&cfg.features, "feature CSV")?;
    let grid = resolve_grid(&cfg.grid, path)?;
    let features = load_features(path, &grid, cfg.standardize)?;
    let model = fit(&features, &cfg.clustering)?;
    write_model(&model, &grid, out, "clusters")?;
    let score = (model.k_eff() >= 2)
        .then(|| silhouette(&features, &model, cfg.sample_cap, cfg.clustering.seed))
        .transpose()?
        .map(|s| s.score);
    write_json(
        out,
        "cluster_report.json",
        &json!({
            "config": cfg.clustering,
            "k_eff": model.k_eff(),
            "sizes": model.sizes(),
            "noise_label": model.noise_label(),
            "inertia": model.inertia(),
            "silhouette": score,
        }),
    )?;
    match score {
        Some(s) => println!("K_eff = {}, silhouette = {s:.4}", model.k_eff()),
        None => println!("K_eff = {}, silhouette undefined", model.k_eff()),
    }
    Ok(())
}

pub fn tune(cfg: &TuneConfig, out: &Path) -> Result<()> {
    let first = cfg
        .features
        .values()
        .next()
        .ok_or_else(|| anyhow!("no feature CSVs given (--features KIND=PATH)"))?;
    let grid = resolve_grid(&cfg.grid, first)?;
    let set = load_feature_set(&cfg.features, &grid, cfg.standardize)?;
    let result = search(&set, &cfg.search)?;
    let mut w = create(out, "tune_trials.csv")?;
    result.write_csv(&mut w)?;
    w.flush()?;
    let best = result.best();
    write_json(out, "tune_best.json", best)?;
    write_model(&refit(&set, best)?, &grid, out, "best_clusters")?;
    println!(
        "best trial {}: {} {} K_eff={} objective={:.4}",
        best.trial, best.feature, best.config.algorithm, best.k_eff, best.objective
    );
    Ok(())
}

/// Feature matrices, truth and grid for a simulation.
struct SimData {
    grid: GridSpec,
    truth: GroundTruth,
    features: FeatureSet,
    model: Option<Arc<ClusterModel>>,
}

fn sim_data(scene: &SyntheticSceneConfig, inputs: Option<&DataInputs>, zscore: bool) -> Result<SimData> {
    match inputs {
        None => {
            let s = generate_synthetic(scene)?;
            let features = if zscore { standardize(&s.features) } else { s.features };
            Ok(SimData {
                grid: s.grid,
                truth: s.truth,
                features: FeatureSet::from([(features.kind(), features)]),
                model: None,
            })
        }
        Some(inp) => {
            let grid = resolve_grid(&inp.grid, &inp.truth)?;
            let file = File::open(&inp.truth).with_context(|| format!("opening {}", inp.truth.display()))?;
            let truth = GroundTruth::read_csv(BufReader::new(file), &grid)?;
            let features = load_feature_set(&inp.features, &grid, zscore)?;
            let model = match &inp.cluster_model {
                Some(p) => {
                    let file = File::open(p).with_context(|| format!("opening {}", p.display()))?;
                    Some(Arc::new(ClusterModel::read_csv(BufReader::new(file), &grid, None)?))
                }
                None => None,
            };
            Ok(SimData {
                grid,
                truth,
                features,
                model,
            })
        }
    }
}

pub fn sweep(cfg: &SweepConfig, out: &Path) -> Result<()> {
    let data = sim_data(&cfg.scene, cfg.inputs.as_ref(), cfg.standardize)?;
    if data.features.is_empty() {
        bail!("sweep needs at least one feature CSV in inputs.features");
    }
    let result = sweep_correlation(&data.features, &data.truth, &data.grid, &cfg.search, cfg.m, cfg.seeds)?;
    let mut w = create(out, "sweep_trials.csv")?;
    write_trial_log(&result.trials, &mut w)?;
    w.flush()?;
    let mut w = csv::Writer::from_writer(create(out, "plot_silhouette_vs_cost.csv")?);
    w.write_record(["trial", "feature", "algo", "abs_silhouette", "cost_samples"])?;
    let mut valid = 0;
    for t in result.trials.iter().filter(|t| !t.is_degenerate()) {
        let (Some(s), Some(cost)) = (t.silhouette, t.cost_samples) else {
            continue;
        };
        valid += 1;
        w.write_record([
            t.trial.to_string(),
            t.feature.to_string(),
            t.config.algorithm.to_string(),
            format!("{:.6}", s.abs()),
            format!("{cost:.3}"),
        ])?;
    }
    w.flush()?;
    write_json(
        out,
        "sweep_summary.json",
        &json!({
            "trials": result.trials.len(),
            "non_degenerate": valid,
            "positives": data.truth.positives(),
            "m": cfg.m,
            "seeds": cfg.seeds,
            "spearman": result.spearman,
        }),
    )?;
    match result.spearman {
        Some(r) => println!("spearman(|s|, cost) = {r:.4} over {valid} configurations"),
        None => println!("spearman undefined ({valid} usable configurations)"),
    }
    Ok(())
}

pub fn experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    if cfg.strategies.is_empty() {
        bail!("no strategies selected");
    }
    let data = sim_data(&cfg.scene, cfg.inputs.as_ref(), cfg.standardize)?;
    let mut model = data.model.clone();
    if model.is_none() && cfg.strategies.iter().any(|s| s.needs_clusters()) {
        let features = match data.features.len() {
            1 => data.features.values().next().expect("one entry"),
            0 => bail!("cluster strategies need a cluster model or one feature CSV"),
            _ => bail!("cluster strategies need a cluster model or exactly one feature CSV"),
        };
        let fitted = fit(features, &cfg.clustering)?;
        write_model(&fitted, &data.grid, out, "clusters")?;
        model = Some(Arc::new(fitted));
    }
    let arms = cfg
        .strategies
        .iter()
        .map(|&strategy| {
            let sc = StrategyConfig {
                strategy,
                radius_m: cfg.radius_m,
                weight: cfg.weight,
            };
            let m = strategy.needs_clusters().then(|| model.clone()).flatten();
            Ok(ExperimentArm {
                name: strategy.to_string(),
                sampler: Sampler::new(sc, data.grid, m)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let report = run_experiment(&arms, &cfg.budgets, cfg.trials, &data.truth, cfg.seed)?;

    let mut w = create(out, "report.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    write_json(out, "report.json", &report)?;

    let mut w = csv::Writer::from_writer(create(out, "trials.csv")?);
    let mut header = vec!["strategy".to_string(), "trial".into(), "seed".into()];
    header.extend(report.budgets.iter().map(|b| format!("n_pos@{b}")));
    w.write_record(&header)?;
    for t in &report.trials {
        let mut rec = vec![t.strategy.clone(), t.trial.to_string(), t.seed.to_string()];
        rec.extend(t.n_pos.iter().map(|n| n.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;

    if cfg.session_logs {
        for (t, session) in report.trials.iter().zip(&report.sessions) {
            let mut w = create(out, &format!("logs/{}_trial{}.csv", t.strategy, t.trial))?;
            session.write_log_csv(&mut w)?;
            w.flush()?;
        }
    }

    // n+ against every budget up to the largest, averaged over trials.
    let max_budget = report.budgets.iter().copied().max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(create(out, "plot_npos_vs_budget.csv")?);
    w.write_record(["strategy", "budget", "n_pos_mean", "n_pos_std"])?;
    for arm in &arms {
        let sessions: Vec<_> = report
            .trials
            .iter()
            .zip(&report.sessions)
            .filter(|(t, _)| t.strategy == arm.name)
            .map(|(_, s)| s)
            .collect();
        for b in 1..=max_budget {
            let values: Vec<f64> = sessions.iter().map(|s| s.positives_within(b) as f64).collect();
            let (mean, std) = rarespot_core::simulate::mean_std(&values);
            w.write_record([arm.name.clone(), b.to_string(), format!("{mean:.4}"), format!("{std:.4}")])?;
        }
    }
    w.flush()?;

    println!("{} positives in {} cells", data.truth.positives(), data.grid.len());
    println!("{:<16} {:>8} {:>10} {:>8}", "strategy", "budget", "n+ mean", "std");
    for r in &report.rows {
        println!("{:<16} {:>8} {:>10.1} {:>8.2}", r.strategy, r.budget, r.n_pos_mean, r.n_pos_std);
    }
    Ok(())
}

pub fn serve(cfg: &ServeConfig) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let mut opts = match &cfg.data_root {
        Some(root) => ServiceOptions::new(root),
        None => ServiceOptions::from_env(),
    };
    opts.static_dir = cfg.static_dir.clone();
    opts.snapshot_every = cfg.snapshot_every;
    let addr: std::net::SocketAddr = format!("{}:{}", cfg.host, cfg.port)
        .parse()
        .with_context(|| format!("bad listen address {}:{}", cfg.host, cfg.port))?;
    tokio::runtime::Runtime::new()?
        .block_on(rarespot_service::serve(addr, opts))
        .context("service stopped")
}

pub fn rce_demo(cfg: &RceDemoConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let (n, c) = (cfg.pixels, cfg.classes);
    let mut rng = seeded(cfg.seed);
    let normal = Normal::new(0.0, cfg.logit_scale).map_err(|e| anyhow!("logit_scale: {e}"))?;
    let logits: Vec<f64> = (0..n * c).map(|_| normal.sample(&mut rng)).collect();
    let classes: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    // Labeling order: pixels become labeled in this order as rho grows.
    let order = index::sample(&mut rng, n, n).into_vec();
    let batch_with = |labeled: usize| {
        let mut targets = vec![None; n];
        for &p in &order[..labeled] {
            targets[p] = Some(classes[p]);
        }
        RceBatch::new(n, c, logits.clone(), targets)
    };

    let labeled = (cfg.labeled_fraction * n as f64).round() as usize;
    let batch = batch_with(labeled)?;
    let value = rce_loss(&batch);
    let grad = rce_gradient(&batch);
    let h = 1e-5;
    let mut max_err = 0.0f64;
    for i in 0..n * c {
        let mut plus = logits.clone();
        plus[i] += h;
        let mut minus = logits.clone();
        minus[i] -= h;
        let numeric = (rce_loss(&batch.with_logits(plus)?).j - rce_loss(&batch.with_logits(minus)?).j) / (2.0 * h);
        max_err = max_err.max((numeric - grad[i]).abs());
    }
    write_json(
        out,
        "rce_demo.json",
        &json!({
            "pixels": n,
            "classes": c,
            "labeled": batch.labeled(),
            "rho": batch.rho(),
            "j": value.j,
            "ce_term": value.ce_term,
            "entropy_term": value.entropy_term,
            "max_gradient_error": max_err,
        }),
    )?;

    let mut w = csv::Writer::from_writer(create(out, "rce_rho_curve.csv")?);
    w.write_record(["labeled", "rho", "j", "ce_term", "entropy_term"])?;
    let step = (n / 20).max(1);
    for l in (0..=n).step_by(step).chain((n % step != 0).then_some(n)) {
        let b = batch_with(l)?;
        let v = rce_loss(&b);
        w.write_record([
            l.to_string(),
            format!("{:.6}", b.rho()),
            format!("{:.9}", v.j),
            format!("{:.9}", v.ce_term),
            format!("{:.9}", v.entropy_term),
        ])?;
    }
    w.flush()?;
    println!(
        "rho={:.3} J={:.6} (ce {:.6}, entropy {:.6}); max |grad - central diff| = {max_err:.2e}",
        batch.rho(),
        value.j,
        value.ce_term,
        value.entropy_term
    );
    Ok(())
}
