use rand::Rng;
use rayon::prelude::*;

use super::{sq_dist_centroid, ClusterModel, ClusteringConfig};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::rng::{derive_seed, seeded, SeededRng};

/// Result of a k-means fit with its convergence trace.
#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub model: ClusterModel,
    /// Inertia after each assignment step of the winning restart.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

/// Lloyd's algorithm from k-means++ seeds, best of `cfg.n_init` restarts.
pub fn kmeans(features: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel> {
    Ok(kmeans_fit(features, cfg)?.model)
}

pub fn kmeans_fit(features: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<KMeansFit> {
    let k = cfg.k;
    if k == 0 {
        return Err(Error::Config("K must be positive".into()));
    }
    if features.n() < k {
        return Err(Error::TooFewPoints {
            needed: k,
            got: features.n(),
        });
    }
    let mut best: Option<Run> = None;
    for restart in 0..cfg.n_init.max(1) {
        let mut rng = seeded(derive_seed(cfg.seed, &[restart as u64]));
        let run = lloyd(features, k, cfg.max_iter, cfg.tol, &mut rng);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let model = ClusterModel::from_assignment(run.labels, None)?.with_centroids(run.centroids, run.inertia);
    Ok(KMeansFit {
        model,
        inertia_history: run.history,
        iterations: run.iterations,
    })
}

struct Run {
    labels: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    inertia: f64,
    history: Vec<f64>,
    iterations: usize,
}

fn lloyd(x: &FeatureMatrix, k: usize, max_iter: usize, tol: f64, rng: &mut SeededRng) -> Run {
    let mut centroids = plus_plus_init(x, k, rng);
    let mut history = Vec::new();
    let mut iterations = 0;
    let (mut labels, mut dist) = assign(x, &centroids);
    repair_empty(x, k, &mut labels, &mut dist, &mut centroids);
    history.push(dist.iter().sum());
    while iterations < max_iter {
        iterations += 1;
        let next = means(x, k, &labels, &centroids);
        let shift = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        centroids = next;
        let (l, d) = assign(x, &centroids);
        labels = l;
        dist = d;
        repair_empty(x, k, &mut labels, &mut dist, &mut centroids);
        history.push(dist.iter().sum());
        if shift < tol {
            break;
        }
    }
    Run {
        inertia: *history.last().expect("history is non-empty"),
        labels,
        centroids,
        history,
        iterations,
    }
}

/// k-means++ seeding: D²-weighted picks after a uniform first center.
fn plus_plus_init(x: &FeatureMatrix, k: usize, rng: &mut SeededRng) -> Vec<Vec<f64>> {
    let n = x.n();
    let to_f64 = |i: usize| x.row(i).iter().map(|v| f64::from(*v)).collect::<Vec<_>>();
    let mut centroids = vec![to_f64(rng.random_range(0..n))];
    let mut d2: Vec<f64> = (0..n)
        .map(|i| sq_dist_centroid(x.row(i), &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = Some(i);
                    break;
                }
            }
            chosen.unwrap_or_else(|| d2.iter().rposition(|w| *w > 0.0).unwrap_or(n - 1))
        } else {
            rng.random_range(0..n)
        };
        let c = to_f64(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist_centroid(x.row(i), &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Nearest centroid per point (lowest index on ties) and its squared distance.
fn assign(x: &FeatureMatrix, centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    (0..x.n())
        .into_par_iter()
        .map(|i| {
            let row = x.row(i);
            let mut best = (0usize, f64::INFINITY);
            for (c, centroid) in centroids.iter().enumerate() {
                let d = sq_dist_centroid(row, centroid);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

/// Moves the point farthest from its centroid (taken from a cluster with
/// more than one member) into each empty cluster.
fn repair_empty(
    x: &FeatureMatrix,
    k: usize,
    labels: &mut [usize],
    dist: &mut [f64],
    centroids: &mut [Vec<f64>],
) {
    let mut sizes = vec![0usize; k];
    for &l in labels.iter() {
        sizes[l] += 1;
    }
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let mut far: Option<usize> = None;
        for i in 0..labels.len() {
            if sizes[labels[i]] > 1 && far.is_none_or(|f| dist[i] > dist[f]) {
                far = Some(i);
            }
        }
        let Some(i) = far else { break };
        sizes[labels[i]] -= 1;
        sizes[empty] = 1;
        labels[i] = empty;
        dist[i] = 0.0;
        centroids[empty] = x.row(i).iter().map(|v| f64::from(*v)).collect();
    }
}

fn means(x: &FeatureMatrix, k: usize, labels: &[usize], previous: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = x.d();
    let mut sums = vec![vec![0.0f64; d]; k];
    let mut counts = vec![0usize; k];
    for (i, &l) in labels.iter().enumerate() {
        counts[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(x.row(i)) {
            *s += f64::from(*v);
        }
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(c, (s, n))| {
            if n == 0 {
                previous[c].clone()
            } else {
                s.into_iter().map(|v| v / n as f64).collect()
            }
        })
        .collect()
}

/// Within-cluster sum of squares of `ids` around their mean.
pub(crate) fn sse(x: &FeatureMatrix, ids: &[usize]) -> f64 {
    if ids.len() < 2 {
        return 0.0;
    }
    let d = x.d();
    let mut mean = vec![0.0f64; d];
    for &i in ids {
        for (m, v) in mean.iter_mut().zip(x.row(i)) {
            *m += f64::from(*v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= ids.len() as f64);
    ids.iter().map(|&i| sq_dist_centroid(x.row(i), &mean)).sum()
}
