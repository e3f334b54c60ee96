use std::sync::Arc;

use rarespot_core::clustering::{cluster, ClusterModel, ClusteringConfig};
use rarespot_core::features::{featurize_scene, read_features, standardize, Featurizer, RcfConfig};
use rarespot_core::grid::{write_rawf32, SceneManifest};
use rarespot_core::simulate::{generate_synthetic, run_session, SyntheticSceneConfig};
use rarespot_core::surface::{Sampler, Strategy, StrategyConfig};

fn rendered_scene_manifest(dir: &std::path::Path) -> (SceneManifest, rarespot_core::simulate::SyntheticScene) {
    let cfg = SyntheticSceneConfig {
        rows: 20,
        cols: 20,
        positive_fraction: 0.05,
        render: true,
        render_patch_px: 8,
        seed: 21,
        ..SyntheticSceneConfig::default()
    };
    let scene = generate_synthetic(&cfg).unwrap();
    write_rawf32(scene.raster.as_ref().unwrap(), &dir.join("scene.f32")).unwrap();
    let manifest_path = dir.join("manifest.json");
    std::fs::write(
        &manifest_path,
        r#"{"scene_path": "scene.f32", "format": "rawf32", "patch_size_px": 8}"#,
    )
    .unwrap();
    (SceneManifest::read(&manifest_path).unwrap(), scene)
}

#[test]
fn rendered_scene_round_trips_through_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, synth) = rendered_scene_manifest(dir.path());
    let (raster, grid) = manifest.load().unwrap();
    assert_eq!((grid.rows, grid.cols), (20, 20));
    assert_eq!(grid.patch_ground_m(), synth.grid.patch_ground_m());
    assert_eq!(&raster, synth.raster.as_ref().unwrap());
}

#[test]
fn colorstats_clusters_beat_uniform_on_rendered_scene() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, synth) = rendered_scene_manifest(dir.path());
    let (raster, grid) = manifest.load().unwrap();
    let features = standardize(&featurize_scene(&raster, &grid, &Featurizer::Colorstats).unwrap());
    let model = Arc::new(cluster(&features, &ClusteringConfig::kmeans(6, 1)).unwrap());
    let budget = 100;
    let sampler = Sampler::new(StrategyConfig::new(Strategy::ClusterOffline), grid, Some(model)).unwrap();
    let mut found = 0;
    for seed in 0..5 {
        found += run_session(sampler.clone(), &synth.truth, budget, seed).unwrap().n_pos;
    }
    let uniform_expectation = 5.0 * budget as f64 * 20.0 / 400.0;
    assert!(found as f64 >= 2.0 * uniform_expectation, "found {found}");
}

#[test]
fn rcf_featurization_is_deterministic_and_csv_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = rendered_scene_manifest(dir.path());
    let (raster, grid) = manifest.load().unwrap();
    let method = Featurizer::Rcf(RcfConfig {
        num_filters: 16,
        seed: 5,
        ..RcfConfig::default()
    });
    let a = featurize_scene(&raster, &grid, &method).unwrap();
    let b = featurize_scene(&raster, &grid, &method).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.d(), 16);
    let mut csv = Vec::new();
    a.write_csv(&grid, &mut csv).unwrap();
    let back = read_features(csv.as_slice(), &grid).unwrap();
    assert_eq!(back.data(), a.data());
}

#[test]
fn cluster_model_csv_round_trip_keeps_surface() {
    let synth = generate_synthetic(&SyntheticSceneConfig {
        rows: 15,
        cols: 15,
        ..SyntheticSceneConfig::default()
    })
    .unwrap();
    let model = cluster(&synth.features, &ClusteringConfig::kmeans(4, 2)).unwrap();
    let mut csv = Vec::new();
    model.write_csv(&synth.grid, &mut csv).unwrap();
    let back = ClusterModel::read_csv(csv.as_slice(), &synth.grid, None).unwrap();
    assert_eq!(back.assignment(), model.assignment());
    let cfg = StrategyConfig::new(Strategy::ClusterOffline);
    let a = Sampler::new(cfg.clone(), synth.grid, Some(Arc::new(model))).unwrap();
    let b = Sampler::new(cfg, synth.grid, Some(Arc::new(back))).unwrap();
    assert_eq!(a.surface().probs(), b.surface().probs());
}
