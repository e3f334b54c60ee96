//! Cluster assignment of grid cells and silhouette validation.
//!
//! All distances are Euclidean, computed in `f64` over the stored feature
//! rows. Every algorithm is a pure function of its inputs and seed.

mod bisecting;
mod dbscan;
mod kmeans;
mod silhouette;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::grid::{GridSpec, PatchRef};

pub use bisecting::bisecting_kmeans;
pub use dbscan::{core_points, dbscan};
pub use kmeans::{kmeans, kmeans_fit, KMeansFit};
pub use silhouette::{silhouette, SilhouetteResult, DEFAULT_SAMPLE_CAP};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Kmeans,
    BisectingKmeans,
    Dbscan,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Kmeans => "kmeans",
            Algorithm::BisectingKmeans => "bisecting_kmeans",
            Algorithm::Dbscan => "dbscan",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(Algorithm::Kmeans),
            "bisecting_kmeans" => Ok(Algorithm::BisectingKmeans),
            "dbscan" => Ok(Algorithm::Dbscan),
            other => Err(Error::Config(format!("unknown clustering algorithm `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClusteringConfig {
    pub algorithm: Algorithm,
    /// Cluster count for the k-means variants.
    pub k: usize,
    /// DBSCAN neighborhood radius.
    pub eps: f64,
    /// DBSCAN core threshold, counting the point itself.
    pub min_neighbors: usize,
    pub seed: u64,
    pub max_iter: usize,
    /// Lloyd iterations stop once no centroid moves farther than this.
    pub tol: f64,
    /// Independent k-means++ restarts; the lowest-inertia run wins.
    pub n_init: usize,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Kmeans,
            k: 8,
            eps: 0.5,
            min_neighbors: 5,
            seed: 0,
            max_iter: 300,
            tol: 1e-4,
            n_init: 4,
        }
    }
}

impl ClusteringConfig {
    pub fn kmeans(k: usize, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::Kmeans,
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn bisecting(k: usize, seed: u64) -> Self {
        Self {
            algorithm: Algorithm::BisectingKmeans,
            k,
            seed,
            ..Self::default()
        }
    }

    pub fn dbscan(eps: f64, min_neighbors: usize) -> Self {
        Self {
            algorithm: Algorithm::Dbscan,
            eps,
            min_neighbors,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.algorithm {
            Algorithm::Kmeans | Algorithm::BisectingKmeans => {
                if self.k < 2 {
                    return Err(Error::Config(format!("K must be at least 2, got {}", self.k)));
                }
                if self.max_iter == 0 || self.n_init == 0 {
                    return Err(Error::Config("max_iter and n_init must be positive".into()));
                }
                if !(self.tol >= 0.0) {
                    return Err(Error::Config("tol must be non-negative".into()));
                }
            }
            Algorithm::Dbscan => {
                if !(self.eps > 0.0) {
                    return Err(Error::Config(format!("eps must be positive, got {}", self.eps)));
                }
                if self.min_neighbors == 0 {
                    return Err(Error::Config("min_neighbors must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Fits the configured algorithm.
pub fn cluster(features: &FeatureMatrix, cfg: &ClusteringConfig) -> Result<ClusterModel> {
    cfg.validate()?;
    match cfg.algorithm {
        Algorithm::Kmeans => kmeans(features, cfg),
        Algorithm::BisectingKmeans => bisecting_kmeans(features, cfg),
        Algorithm::Dbscan => dbscan(features, cfg),
    }
}

/// Cluster labels for every cell plus per-cluster sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    assignment: Vec<usize>,
    sizes: Vec<usize>,
    centroids: Option<Vec<Vec<f64>>>,
    noise_label: Option<usize>,
    inertia: Option<f64>,
}

impl ClusterModel {
    /// Builds a model from raw labels. Labels must be dense: every value in
    /// `0..max+1` has at least one member.
    pub fn from_assignment(assignment: Vec<usize>, noise_label: Option<usize>) -> Result<Self> {
        if assignment.is_empty() {
            return Err(Error::Config("empty assignment".into()));
        }
        let k = assignment.iter().max().map_or(0, |m| m + 1);
        let mut sizes = vec![0usize; k];
        for &l in &assignment {
            sizes[l] += 1;
        }
        if let Some(empty) = sizes.iter().position(|s| *s == 0) {
            return Err(Error::Config(format!("cluster label {empty} has no members")));
        }
        if let Some(nl) = noise_label {
            if nl >= k {
                return Err(Error::Config(format!("noise label {nl} is not a realized cluster")));
            }
        }
        Ok(Self {
            assignment,
            sizes,
            centroids: None,
            noise_label,
            inertia: None,
        })
    }

    pub(crate) fn with_centroids(mut self, centroids: Vec<Vec<f64>>, inertia: f64) -> Self {
        self.centroids = Some(centroids);
        self.inertia = Some(inertia);
        self
    }

    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Realized cluster count, including the DBSCAN noise pseudo-cluster.
    pub fn k_eff(&self) -> usize {
        self.sizes.len()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn label(&self, id: usize) -> usize {
        self.assignment[id]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn centroids(&self) -> Option<&[Vec<f64>]> {
        self.centroids.as_deref()
    }

    pub fn noise_label(&self) -> Option<usize> {
        self.noise_label
    }

    /// Within-cluster sum of squared distances (k-means variants).
    pub fn inertia(&self) -> Option<f64> {
        self.inertia
    }

    /// Members of each cluster, in id order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.k_eff()];
        for (i, &l) in self.assignment.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    pub fn summary(&self) -> ClusterSummary {
        ClusterSummary {
            k_eff: self.k_eff(),
            noise_label: self.noise_label,
            sizes: self.sizes.clone(),
        }
    }

    /// Writes `row,col,cluster`.
    pub fn write_csv<W: Write>(&self, grid: &GridSpec, writer: W) -> Result<()> {
        if grid.len() != self.n() {
            return Err(Error::ModelGridMismatch {
                model: self.n(),
                grid: grid.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "cluster"])?;
        for (id, label) in self.assignment.iter().enumerate() {
            let p = grid.patch(id);
            w.write_record([p.row.to_string(), p.col.to_string(), label.to_string()])?;
        }
        w.flush().map_err(|e| Error::io("<cluster csv>", e))?;
        Ok(())
    }

    /// Reads an assignment CSV written by [`ClusterModel::write_csv`].
    pub fn read_csv<R: Read>(reader: R, grid: &GridSpec, noise_label: Option<usize>) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut labels: Vec<Option<usize>> = vec![None; grid.len()];
        for rec in rdr.records() {
            let rec = rec?;
            if rec.len() != 3 {
                return Err(Error::Config("cluster CSV rows must be `row,col,cluster`".into()));
            }
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad integer `{s}` in cluster CSV")))
            };
            let p = PatchRef::new(num(&rec[0])?, num(&rec[1])?);
            grid.check(p)?;
            let slot = &mut labels[grid.id(p)];
            if slot.is_some() {
                return Err(Error::Config(format!("duplicate cell ({}, {})", p.row, p.col)));
            }
            *slot = Some(num(&rec[2])?);
        }
        let assignment = labels
            .into_iter()
            .enumerate()
            .map(|(id, l)| {
                l.ok_or_else(|| {
                    let p = grid.patch(id);
                    Error::Config(format!("cluster CSV is missing cell ({}, {})", p.row, p.col))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_assignment(assignment, noise_label)
    }
}

/// JSON companion of the assignment CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub k_eff: usize,
    pub noise_label: Option<usize>,
    pub sizes: Vec<usize>,
}

#[inline]
pub(crate) fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = f64::from(*x) - f64::from(*y);
            d * d
        })
        .sum()
}

#[inline]
pub(crate) fn sq_dist_centroid(a: &[f32], c: &[f64]) -> f64 {
    a.iter()
        .zip(c)
        .map(|(x, y)| {
            let d = f64::from(*x) - y;
            d * d
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        assert!(ClusteringConfig::kmeans(1, 0).validate().is_err());
        assert!(ClusteringConfig::kmeans(2, 0).validate().is_ok());
        assert!(ClusteringConfig::dbscan(0.0, 3).validate().is_err());
        assert!(ClusteringConfig::dbscan(0.1, 0).validate().is_err());
        assert!(ClusteringConfig::dbscan(0.1, 1).validate().is_ok());
    }

    #[test]
    fn model_from_assignment_rejects_gaps() {
        assert!(ClusterModel::from_assignment(vec![0, 2, 2], None).is_err());
        let m = ClusterModel::from_assignment(vec![1, 0, 1, 1], None).unwrap();
        assert_eq!(m.sizes(), &[1, 3]);
        assert_eq!(m.k_eff(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let grid = GridSpec::new(2, 3, 1, 1.0).unwrap();
        let m = ClusterModel::from_assignment(vec![0, 1, 1, 2, 0, 2], Some(2)).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&grid, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("row,col,cluster\n0,0,0\n0,1,1\n"));
        let back = ClusterModel::read_csv(buf.as_slice(), &grid, Some(2)).unwrap();
        assert_eq!(back.assignment(), m.assignment());
        assert_eq!(back.summary().noise_label, Some(2));
    }
}
