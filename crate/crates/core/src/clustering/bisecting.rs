use super::kmeans::{kmeans_fit, sse};
use super::{ClusterModel, ClusteringConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::derive_seed;

/// Divisive k-means: keep splitting the cluster with the largest
/// within-cluster sum of squares with a seeded 2-means until K exist.
pub fn bisecting_kmeans(features: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel> {
    let k = cfg.k;
    if features.n() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: features.n(),
        });
    }
    let mut clusters: Vec<Vec<usize>> = vec![(0..features.n()).collect()];
    let mut scores: Vec<f64> = vec![sse(features, &clusters[0])];
    let mut split = 0u64;
    while clusters.len() < k {
        let target = (0..clusters.len())
            .filter(|&c| clusters[c].len() > 1)
            .fold(None::<usize>, |best, c| match best {
                Some(b) if scores[b] >= scores[c] => Some(b),
                _ => Some(c),
            })
            .expect("n >= K leaves a splittable cluster");
        let ids = std::mem::take(&mut clusters[target]);
        let sub = features.select(&ids);
        let two = ClusteringConfig {
            k: 2,
            seed: derive_seed(cfg.seed, &[split]),
            ..cfg.clone()
        };
        let fit = kmeans_fit(&sub, &two)?;
        let (mut left, mut right) = (Vec::new(), Vec::new());
        for (local, &id) in ids.iter().enumerate() {
            if fit.model.label(local) == 0 {
                left.push(id);
            } else {
                right.push(id);
            }
        }
        scores[target] = sse(features, &left);
        clusters[target] = left;
        scores.push(sse(features, &right));
        clusters.push(right);
        split += 1;
    }

    let mut assignment = vec![0usize; features.n()];
    for (label, members) in clusters.iter().enumerate() {
        for &i in members {
            assignment[i] = label;
        }
    }
    let d = features.d();
    let centroids: Vec<Vec<f64>> = clusters
        .iter()
        .map(|members| {
            let mut c = vec![0.0f64; d];
            for &i in members {
                for (s, v) in c.iter_mut().zip(features.row(i)) {
                    *s += f64::from(*v);
                }
            }
            c.iter_mut().for_each(|s| *s /= members.len() as f64);
            c
        })
        .collect();
    let inertia = scores.iter().sum();
    Ok(ClusterModel::from_assignment(assignment, None)?.with_centroids(centroids, inertia))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureKind;

    fn one_d(values: &[f32]) -> FeatureMatrix {
        FeatureMatrix::new(values.len(), 1, values.to_vec(), FeatureKind::External).unwrap()
    }

    #[test]
    fn three_natural_pairs() {
        let x = one_d(&[0.0, 1.0, 10.0, 11.0, 100.0, 101.0]);
        let m = bisecting_kmeans(&x, &ClusteringConfig::bisecting(3, 0)).unwrap();
        let a = m.assignment();
        assert_eq!(a[0], a[1]);
        assert_eq!(a[2], a[3]);
        assert_eq!(a[4], a[5]);
        assert_eq!(m.k_eff(), 3);
    }

    #[test]
    fn k_equals_n_singletons() {
        let x = one_d(&[5.0, 1.0, 9.0]);
        let m = bisecting_kmeans(&x, &ClusteringConfig::bisecting(3, 0)).unwrap();
        assert_eq!(m.sizes(), &[1, 1, 1]);
    }
}
