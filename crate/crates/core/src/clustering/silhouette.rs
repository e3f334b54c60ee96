use rand::seq::index;
use rayon::prelude::*;
use serde::Serialize;

use super::{sq_dist, ClusterModel};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::seeded;

/// Bound on the number of points entering the O(n²) computation.
pub const DEFAULT_SAMPLE_CAP: usize = 5000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SilhouetteResult {
    /// Point ids the coefficients refer to (all points unless subsampled).
    pub points: Vec<usize>,
    /// Mean distance to the other members of the point's own cluster.
    pub a: Vec<f64>,
    /// Smallest mean distance to the members of another cluster.
    pub b: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub score: f64,
}

/// Silhouette coefficients and their mean.
///
/// When the model has more than `sample_cap` points, a uniform subsample of
/// `sample_cap` points (drawn with `seed`) is scored against itself.
/// Singleton clusters score 0; the DBSCAN noise pseudo-cluster counts as a
/// cluster.
pub fn silhouette(
    features: &FeatureMatrix,
    model: &ClusterModel,
    sample_cap: usize,
    seed: u64,
) -> Result<SilhouetteResult> {
    let n = features.n();
    if model.n() != n {
        return Err(Error::ModelGridMismatch {
            model: model.n(),
            grid: n,
        });
    }
    if model.k_eff() < 2 {
        return Err(Error::SingleCluster);
    }
    let points: Vec<usize> = if sample_cap > 0 && n > sample_cap {
        let mut ids = index::sample(&mut seeded(seed), n, sample_cap).into_vec();
        ids.sort_unstable();
        ids
    } else {
        (0..n).collect()
    };
    let k = model.k_eff();
    let mut counts = vec![0usize; k];
    for &i in &points {
        counts[model.label(i)] += 1;
    }
    if counts.iter().filter(|c| **c > 0).count() < 2 {
        return Err(Error::SingleCluster);
    }

    let per_point: Vec<(f64, f64, f64)> = points
        .par_iter()
        .map(|&i| {
            let own = model.label(i);
            let row = features.row(i);
            let mut sums = vec![0.0f64; k];
            for &j in &points {
                if j != i {
                    sums[model.label(j)] += sq_dist(row, features.row(j)).sqrt();
                }
            }
            if counts[own] <= 1 {
                return (0.0, 0.0, 0.0);
            }
            let a = sums[own] / (counts[own] - 1) as f64;
            let b = (0..k)
                .filter(|&c| c != own && counts[c] > 0)
                .map(|c| sums[c] / counts[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let denom = a.max(b);
            let s = if denom > 0.0 { (b - a) / denom } else { 0.0 };
            (a, b, s)
        })
        .collect();

    let mut a = Vec::with_capacity(points.len());
    let mut b = Vec::with_capacity(points.len());
    let mut coefficients = Vec::with_capacity(points.len());
    for (ai, bi, si) in per_point {
        a.push(ai);
        b.push(bi);
        coefficients.push(si);
    }
    let score = coefficients.iter().sum::<f64>() / coefficients.len() as f64;
    Ok(SilhouetteResult {
        points,
        a,
        b,
        coefficients,
        score,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn one_d(values: &[f32]) -> FeatureMatrix {
        FeatureMatrix::new(values.len(), 1, values.to_vec(), FeatureKind::External).unwrap()
    }

    #[test]
    fn worked_two_pairs() {
        let x = one_d(&[0.0, 1.0, 10.0, 11.0]);
        let m = ClusterModel::from_assignment(vec![0, 0, 1, 1], None).unwrap();
        let s = silhouette(&x, &m, DEFAULT_SAMPLE_CAP, 0).unwrap();
        let expect = (9.5 / 10.5 + 8.5 / 9.5) / 2.0;
        assert!((s.score - expect).abs() < 1e-12);
        assert!((s.score - 0.89975).abs() < 5e-5);
        assert!((s.coefficients[0] - 9.5 / 10.5).abs() < 1e-12);
    }

    #[test]
    fn coincident_clusters_score_zero() {
        let x = one_d(&[3.0; 4]);
        let m = ClusterModel::from_assignment(vec![0, 0, 1, 1], None).unwrap();
        let s = silhouette(&x, &m, DEFAULT_SAMPLE_CAP, 0).unwrap();
        assert!(s.coefficients.iter().all(|c| *c == 0.0));
    }

    #[test]
    fn singletons_score_zero() {
        let x = one_d(&[0.0, 1.0, 50.0]);
        let m = ClusterModel::from_assignment(vec![0, 0, 1], None).unwrap();
        let s = silhouette(&x, &m, DEFAULT_SAMPLE_CAP, 0).unwrap();
        assert_eq!(s.coefficients[2], 0.0);
    }

    #[test]
    fn single_cluster_errors() {
        let x = one_d(&[0.0, 1.0]);
        let m = ClusterModel::from_assignment(vec![0, 0], None).unwrap();
        assert!(matches!(
            silhouette(&x, &m, DEFAULT_SAMPLE_CAP, 0),
            Err(Error::SingleCluster)
        ));
    }

    #[test]
    fn subsample_is_seeded() {
        let vals: Vec<f32> = (0..300).map(|i| (i % 3) as f32 * 10.0 + (i as f32) * 1e-3).collect();
        let x = one_d(&vals);
        let m = ClusterModel::from_assignment((0..300).map(|i| i % 3).collect(), None).unwrap();
        let a = silhouette(&x, &m, 50, 4).unwrap();
        let b = silhouette(&x, &m, 50, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.points.len(), 50);
        assert!(a.score > 0.9);
    }
}
