use std::collections::VecDeque;

use rayon::prelude::*;

use super::{sq_dist, ClusterModel, ClusteringConfig};
use crate::error::Result;
use crate::features::FeatureMatrix;

/// Density clustering. A point is core when at least `min_neighbors` points
/// (itself included) lie within `eps`. Clusters are grown from core points
/// in index order; border points join the first cluster that reaches them.
/// Unreached points are gathered into one noise pseudo-cluster carrying the
/// last label.
pub fn dbscan(features: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel> {
    let n = features.n();
    let eps2 = cfg.eps * cfg.eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let row = features.row(i);
        (0..n)
            .filter(|&j| sq_dist(row, features.row(j)) <= eps2)
            .collect()
    };
    let core: Vec<bool> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row = features.row(i);
            let mut count = 0usize;
            for j in 0..n {
                if sq_dist(row, features.row(j)) <= eps2 {
                    count += 1;
                    if count >= cfg.min_neighbors {
                        return true;
                    }
                }
            }
            false
        })
        .collect();

    let mut labels: Vec<Option<usize>> = vec![None; n];
    let mut clusters = 0usize;
    let mut queue = VecDeque::new();
    for seed in 0..n {
        if !core[seed] || labels[seed].is_some() {
            continue;
        }
        let label = clusters;
        clusters += 1;
        labels[seed] = Some(label);
        queue.push_back(seed);
        while let Some(p) = queue.pop_front() {
            for q in neighbors(p) {
                if labels[q].is_none() {
                    labels[q] = Some(label);
                    if core[q] {
                        queue.push_back(q);
                    }
                }
            }
        }
    }

    let has_noise = labels.iter().any(Option::is_none);
    let noise_label = has_noise.then_some(clusters);
    let assignment = labels
        .into_iter()
        .map(|l| l.unwrap_or(clusters))
        .collect();
    ClusterModel::from_assignment(assignment, noise_label)
}

/// Core flags, exposed for partition-level comparisons in tests.
pub fn core_points(features: &FeatureMatrix, cfg: &ClusteringConfig) -> Vec<bool> {
    let eps2 = cfg.eps * cfg.eps;
    (0..features.n())
        .map(|i| {
            (0..features.n())
                .filter(|&j| sq_dist(features.row(i), features.row(j)) <= eps2)
                .count()
                >= cfg.min_neighbors
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn one_d(values: &[f32]) -> FeatureMatrix {
        FeatureMatrix::new(values.len(), 1, values.to_vec(), FeatureKind::External).unwrap()
    }

    #[test]
    fn hand_density_fixture() {
        let x = one_d(&[0.0, 0.5, 1.0, 10.0]);
        let cfg = ClusteringConfig::dbscan(0.6, 3);
        assert_eq!(core_points(&x, &cfg), vec![false, true, false, false]);
        let m = dbscan(&x, &cfg).unwrap();
        assert_eq!(m.assignment(), &[0, 0, 0, 1]);
        assert_eq!(m.noise_label(), Some(1));
        assert_eq!(m.sizes(), &[3, 1]);
    }

    #[test]
    fn wide_eps_single_cluster() {
        let x = one_d(&[0.0, 3.0, 9.0, 4.0]);
        let m = dbscan(&x, &ClusteringConfig::dbscan(100.0, 1)).unwrap();
        assert_eq!(m.k_eff(), 1);
        assert_eq!(m.noise_label(), None);
    }

    #[test]
    fn identical_points_one_cluster() {
        let x = one_d(&[2.0; 5]);
        let m = dbscan(&x, &ClusteringConfig::dbscan(0.1, 5)).unwrap();
        assert_eq!(m.k_eff(), 1);
        assert_eq!(m.noise_label(), None);
    }

    #[test]
    fn all_noise_is_one_pseudo_cluster() {
        let x = one_d(&[0.0, 10.0, 20.0]);
        let m = dbscan(&x, &ClusteringConfig::dbscan(1.0, 2)).unwrap();
        assert_eq!(m.k_eff(), 1);
        assert_eq!(m.noise_label(), Some(0));
    }
}
