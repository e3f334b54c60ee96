use rand::Rng;

use rarespot_core::clustering::{cluster, Algorithm, ClusterModel};
use rarespot_core::features::{FeatureKind, FeatureMatrix};
use rarespot_core::hyperopt::{refit, sweep_correlation, FeatureSet, SearchSpace};
use rarespot_core::rng::seeded;
use rarespot_core::simulate::{generate_synthetic, GroundTruth, SyntheticSceneConfig};
use rarespot_core::Error;

fn tiny_cluster_scene(seed: u64) -> (FeatureSet, rarespot_core::simulate::SyntheticScene) {
    let cfg = SyntheticSceneConfig {
        rows: 30,
        cols: 30,
        dim: 2,
        background_clusters: 1,
        background_spread: 3.0,
        positive_fraction: 0.05,
        positive_shift: 0.0,
        positive_spread: 0.0,
        seed,
        ..SyntheticSceneConfig::default()
    };
    let scene = generate_synthetic(&cfg).unwrap();
    let set = FeatureSet::from([(FeatureKind::External, scene.features.clone())]);
    (set, scene)
}

fn tiny_space(seed: u64) -> SearchSpace {
    SearchSpace {
        algorithms: vec![Algorithm::Kmeans, Algorithm::Dbscan],
        k_max: 8,
        eps_range: Some((0.05, 0.5)),
        eta_min: 20,
        eta_max: 40,
        trials: 12,
        seed,
        ..SearchSpace::default()
    }
}

/// Independent simulation: O(n) weighted draws without replacement from the
/// cluster-weighted surface until `m` positives are seen.
fn naive_cost(model: &ClusterModel, truth: &GroundTruth, m: usize, seeds: u64) -> f64 {
    let n = model.n();
    let k = model.k_eff() as f64;
    let mut total = 0usize;
    for s in 0..seeds {
        let mut rng = seeded(0xABCD + s);
        let mut w: Vec<f64> = (0..n)
            .map(|i| 1.0 / (k * model.sizes()[model.label(i)] as f64))
            .collect();
        let (mut found, mut drawn) = (0, 0);
        while found < m {
            let sum: f64 = w.iter().sum();
            let mut u = rng.random::<f64>() * sum;
            let mut pick = n - 1;
            for (i, wi) in w.iter().enumerate() {
                if *wi > 0.0 {
                    pick = i;
                    if u < *wi {
                        break;
                    }
                    u -= wi;
                }
            }
            w[pick] = 0.0;
            drawn += 1;
            found += usize::from(truth.is_positive(pick));
        }
        total += drawn;
    }
    total as f64 / seeds as f64
}

#[test]
fn tiny_cluster_best_config_minimizes_cost() {
    let (set, scene) = tiny_cluster_scene(0);
    let sweep = sweep_correlation(&set, &scene.truth, &scene.grid, &tiny_space(0), 20, 20).unwrap();
    let best = sweep
        .trials
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective))
        .unwrap();
    let min_cost = sweep
        .trials
        .iter()
        .map(|t| t.cost_samples.unwrap())
        .fold(f64::INFINITY, f64::min);
    assert!(best.cost_samples.unwrap() <= 1.1 * min_cost);
}

#[test]
fn sweep_cost_matches_independent_simulation() {
    let (set, scene) = tiny_cluster_scene(1);
    let sweep = sweep_correlation(&set, &scene.truth, &scene.grid, &tiny_space(1), 20, 20).unwrap();
    for t in sweep.trials.iter().take(4) {
        let model = refit(&set, t).unwrap();
        let want = naive_cost(&model, &scene.truth, 20, 20);
        let got = t.cost_samples.unwrap();
        assert!(
            (got - want).abs() <= 0.1 * want,
            "trial {}: sweep {got} vs independent {want}",
            t.trial
        );
    }
}

#[test]
fn featureless_scene_costs_match_negative_hypergeometric() {
    let (n, positives, m) = (900usize, 45usize, 10usize);
    let features = FeatureMatrix::new(n, 3, vec![1.5; n * 3], FeatureKind::External).unwrap();
    let mut labels = vec![false; n];
    let mut rng = seeded(3);
    let mut placed = 0;
    while placed < positives {
        let i = rng.random_range(0..n);
        if !labels[i] {
            labels[i] = true;
            placed += 1;
        }
    }
    let truth = GroundTruth::new(30, 30, labels).unwrap();
    let grid = rarespot_core::grid::GridSpec::new(30, 30, 128, 0.5).unwrap();
    let set = FeatureSet::from([(FeatureKind::External, features.clone())]);
    let space = SearchSpace {
        algorithms: vec![Algorithm::Dbscan],
        eps_range: Some((0.1, 1.0)),
        eta_max: 10,
        trials: 4,
        ..SearchSpace::default()
    };
    let sweep = sweep_correlation(&set, &truth, &grid, &space, m, 60).unwrap();
    let expected = m as f64 * (n + 1) as f64 / (positives + 1) as f64;
    for t in &sweep.trials {
        assert_eq!(t.k_eff, 1);
        assert!(t.is_degenerate());
        let cost = t.cost_samples.unwrap();
        assert!((cost - expected).abs() <= 0.15 * expected, "{cost} vs {expected}");
    }
    assert_eq!(sweep.spearman, None);
    let model = cluster(&features, &sweep.trials[0].config).unwrap();
    assert_eq!(model.sizes(), &[n]);
}

#[test]
fn single_trial_has_no_correlation() {
    let (set, scene) = tiny_cluster_scene(2);
    let space = SearchSpace {
        trials: 1,
        ..tiny_space(2)
    };
    let sweep = sweep_correlation(&set, &scene.truth, &scene.grid, &space, 5, 3).unwrap();
    assert_eq!(sweep.trials.len(), 1);
    assert_eq!(sweep.spearman, None);
}

#[test]
fn too_many_positives_requested() {
    let (set, scene) = tiny_cluster_scene(2);
    let err = sweep_correlation(&set, &scene.truth, &scene.grid, &tiny_space(2), 46, 3).unwrap_err();
    assert!(matches!(err, Error::NotEnoughPositives { requested: 46, available: 45 }));
}

#[test]
fn tune_ignores_evaluation_order() {
    let (set, _) = tiny_cluster_scene(4);
    let a = rarespot_core::hyperopt::tune(&set, &tiny_space(4)).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| rarespot_core::hyperopt::tune(&set, &tiny_space(4)).unwrap());
    assert_eq!(a.best, b.best);
    for (x, y) in a.trials.iter().zip(&b.trials) {
        assert_eq!((&x.config, x.silhouette), (&y.config, y.silhouette));
    }
}
