//! Per-patch feature vectors: random convolutional features, per-channel
//! color statistics, or embeddings computed elsewhere and imported as CSV.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{extract_patch, GridSpec, PatchPixels, PatchRef, RasterScene};
use crate::rng::seeded;

/// Where a feature matrix came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Rcf,
    Colorstats,
    External,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Rcf => "rcf",
            FeatureKind::Colorstats => "colorstats",
            FeatureKind::External => "external",
        }
    }
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rcf" => Ok(FeatureKind::Rcf),
            "colorstats" => Ok(FeatureKind::Colorstats),
            "external" => Ok(FeatureKind::External),
            other => Err(Error::Config(format!("unknown feature kind `{other}`"))),
        }
    }
}

/// One row per grid cell, ordered by linear patch id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
    kind: FeatureKind,
}

impl FeatureMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>, kind: FeatureKind) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("feature dimension must be at least 1".into()));
        }
        if data.len() != n * d {
            return Err(Error::Config(format!(
                "feature buffer holds {} values, expected {n}x{d}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!(
                "non-finite feature value at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        Ok(Self { n, d, data, kind })
    }

    pub fn from_rows(rows: Vec<Vec<f32>>, kind: FeatureKind) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Config("ragged feature rows".into()));
        }
        Self::new(n, d, rows.into_iter().flatten().collect(), kind)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn kind(&self) -> FeatureKind {
        self.kind
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f32]> {
        self.data.chunks_exact(self.d)
    }

    /// Subset of rows, in the order given.
    pub fn select(&self, ids: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(ids.len() * self.d);
        for &i in ids {
            data.extend_from_slice(self.row(i));
        }
        FeatureMatrix {
            n: ids.len(),
            d: self.d,
            data,
            kind: self.kind,
        }
    }

    /// Writes the feature CSV (`row,col,f0,...`).
    pub fn write_csv<W: Write>(&self, grid: &GridSpec, writer: W) -> Result<()> {
        if grid.len() != self.n {
            return Err(Error::ModelGridMismatch {
                model: self.n,
                grid: grid.len(),
            });
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["row".to_string(), "col".to_string()];
        header.extend((0..self.d).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        for id in 0..self.n {
            let p = grid.patch(id);
            let mut rec = vec![p.row.to_string(), p.col.to_string()];
            rec.extend(self.row(id).iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<feature csv>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, grid: &GridSpec, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(grid, std::io::BufWriter::new(file))
    }
}

/// Per channel: mean, population std, min, max; channels in band order.
pub fn colorstats_features(patch: &PatchPixels) -> Result<Vec<f32>> {
    let plane = patch.size * patch.size;
    if plane == 0 || patch.bands == 0 {
        return Err(Error::Config("empty patch".into()));
    }
    let mut out = Vec::with_capacity(4 * patch.bands);
    for b in 0..patch.bands {
        let values = patch.band(b);
        let n = plane as f64;
        let mean = values.iter().map(|v| f64::from(*v)).sum::<f64>() / n;
        let var = values
            .iter()
            .map(|v| {
                let e = f64::from(*v) - mean;
                e * e
            })
            .sum::<f64>()
            / n;
        let (lo, hi) = values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(*v), hi.max(*v))
            });
        out.extend([mean as f32, var.sqrt() as f32, lo, hi]);
    }
    Ok(out)
}

pub const DEFAULT_RCF_FILTERS: usize = 256;
pub const DEFAULT_RCF_FILTER_SIZE: usize = 3;

/// Random convolutional feature settings. Pooling is a global average and
/// the nonlinearity is ReLU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RcfConfig {
    #[serde(default = "default_rcf_filters")]
    pub num_filters: usize,
    #[serde(default = "default_rcf_size")]
    pub filter_size: usize,
    /// Per-filter bias; all zeros when absent.
    #[serde(default)]
    pub biases: Option<Vec<f64>>,
    #[serde(default)]
    pub seed: u64,
}

fn default_rcf_filters() -> usize {
    DEFAULT_RCF_FILTERS
}

fn default_rcf_size() -> usize {
    DEFAULT_RCF_FILTER_SIZE
}

impl Default for RcfConfig {
    fn default() -> Self {
        Self {
            num_filters: DEFAULT_RCF_FILTERS,
            filter_size: DEFAULT_RCF_FILTER_SIZE,
            biases: None,
            seed: 0,
        }
    }
}

/// Filters materialized from an [`RcfConfig`] for a given band count.
#[derive(Debug, Clone)]
pub struct RcfBank {
    num_filters: usize,
    size: usize,
    bands: usize,
    /// Layout: filter, band, row, col.
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl RcfBank {
    pub fn new(cfg: &RcfConfig, bands: usize) -> Result<Self> {
        if cfg.num_filters == 0 || cfg.filter_size == 0 {
            return Err(Error::Config(
                "RCF needs at least one filter of size >= 1".into(),
            ));
        }
        if cfg.filter_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "RCF filter size must be odd, got {}",
                cfg.filter_size
            )));
        }
        let biases = match &cfg.biases {
            Some(b) if b.len() != cfg.num_filters => {
                return Err(Error::Config(format!(
                    "{} biases given for {} filters",
                    b.len(),
                    cfg.num_filters
                )))
            }
            Some(b) => b.clone(),
            None => vec![0.0; cfg.num_filters],
        };
        let mut rng = seeded(cfg.seed);
        let count = cfg.num_filters * bands * cfg.filter_size * cfg.filter_size;
        let weights = (0..count).map(|_| StandardNormal.sample(&mut rng)).collect();
        Ok(Self {
            num_filters: cfg.num_filters,
            size: cfg.filter_size,
            bands,
            weights,
            biases,
        })
    }

    pub fn num_filters(&self) -> usize {
        self.num_filters
    }

    /// Weights of filter `m`, laid out band, row, col.
    pub fn filter(&self, m: usize) -> &[f64] {
        let len = self.bands * self.size * self.size;
        &self.weights[m * len..(m + 1) * len]
    }

    pub fn bias(&self, m: usize) -> f64 {
        self.biases[m]
    }

    /// Mean over valid positions of ReLU(conv + bias), one value per filter.
    pub fn apply(&self, patch: &PatchPixels) -> Result<Vec<f32>> {
        if patch.bands != self.bands {
            return Err(Error::Config(format!(
                "filters built for {} bands, patch has {}",
                self.bands, patch.bands
            )));
        }
        if self.size > patch.size {
            return Err(Error::Config(format!(
                "filter size {} exceeds patch size {}",
                self.size, patch.size
            )));
        }
        let k = self.size;
        let out = patch.size - k + 1;
        let positions = (out * out) as f64;
        let mut features = Vec::with_capacity(self.num_filters);
        for m in 0..self.num_filters {
            let w = self.filter(m);
            let bias = self.biases[m];
            let mut acc = 0.0f64;
            for r in 0..out {
                for c in 0..out {
                    let mut s = bias;
                    for b in 0..self.bands {
                        for dr in 0..k {
                            let wrow = &w[(b * k + dr) * k..(b * k + dr + 1) * k];
                            let base = (b * patch.size + r + dr) * patch.size + c;
                            let prow = &patch.data[base..base + k];
                            for (wv, pv) in wrow.iter().zip(prow) {
                                s += wv * f64::from(*pv);
                            }
                        }
                    }
                    if s > 0.0 {
                        acc += s;
                    }
                }
            }
            features.push((acc / positions) as f32);
        }
        Ok(features)
    }
}

pub fn rcf_features(patch: &PatchPixels, cfg: &RcfConfig) -> Result<Vec<f32>> {
    RcfBank::new(cfg, patch.bands)?.apply(patch)
}

/// Featurization recipe for a whole scene.
#[derive(Debug, Clone, PartialEq)]
pub enum Featurizer {
    Colorstats,
    Rcf(RcfConfig),
}

/// Featurizes every patch of `scene`, in parallel, rows ordered by patch id.
pub fn featurize_scene(
    scene: &RasterScene,
    grid: &GridSpec,
    method: &Featurizer,
) -> Result<FeatureMatrix> {
    let bank = match method {
        Featurizer::Rcf(cfg) => {
            if cfg.filter_size > grid.patch_size_px {
                return Err(Error::Config(format!(
                    "filter size {} exceeds patch size {}",
                    cfg.filter_size, grid.patch_size_px
                )));
            }
            Some(RcfBank::new(cfg, scene.bands())?)
        }
        Featurizer::Colorstats => None,
    };
    let rows: Vec<Vec<f32>> = (0..grid.len())
        .into_par_iter()
        .map(|id| {
            let patch = extract_patch(scene, grid, grid.patch(id))?;
            match &bank {
                Some(bank) => bank.apply(&patch),
                None => colorstats_features(&patch),
            }
        })
        .collect::<Result<_>>()?;
    let kind = if bank.is_some() {
        FeatureKind::Rcf
    } else {
        FeatureKind::Colorstats
    };
    FeatureMatrix::from_rows(rows, kind)
}

/// Reads a feature CSV and reorders it into patch-id order for `grid`.
pub fn read_features<R: Read>(reader: R, grid: &GridSpec) -> Result<FeatureMatrix> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 3 || &header[0] != "row" || &header[1] != "col" {
        return Err(Error::FeatureImport(
            "header must be `row,col,f0,...`".into(),
        ));
    }
    let d = header.len() - 2;
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; grid.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != d + 2 {
            return Err(Error::FeatureImport(format!(
                "record {} has {} fields, expected {}",
                line + 1,
                rec.len(),
                d + 2
            )));
        }
        let parse_idx = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::FeatureImport(format!("bad cell index `{s}`")))
        };
        let patch = PatchRef::new(parse_idx(&rec[0])?, parse_idx(&rec[1])?);
        grid.check(patch)?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| {
                let v: f32 = s
                    .parse()
                    .map_err(|_| Error::FeatureImport(format!("bad float `{s}`")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::FeatureImport(format!(
                        "non-finite value at cell ({}, {})",
                        patch.row, patch.col
                    )))
                }
            })
            .collect::<Result<Vec<f32>>>()?;
        let slot = &mut slots[grid.id(patch)];
        if slot.is_some() {
            return Err(Error::FeatureImport(format!(
                "duplicate cell ({}, {})",
                patch.row, patch.col
            )));
        }
        *slot = Some(values);
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (id, slot) in slots.into_iter().enumerate() {
        match slot {
            Some(r) => rows.push(r),
            None => {
                let p = grid.patch(id);
                return Err(Error::FeatureImport(format!(
                    "missing cell ({}, {})",
                    p.row, p.col
                )));
            }
        }
    }
    FeatureMatrix::from_rows(rows, FeatureKind::External)
}

pub fn import_features(path: &Path, grid: &GridSpec) -> Result<FeatureMatrix> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_features(std::io::BufReader::new(file), grid)
}

/// Grid dimensions implied by the largest row/col indices of a feature CSV.
pub fn csv_grid_dims(path: &Path) -> Result<(usize, usize)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(std::io::BufReader::new(file));
    let (mut rows, mut cols) = (0, 0);
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec?;
        let r: usize = rec[0].trim().parse().map_err(|_| Error::FeatureImport("bad row".into()))?;
        let c: usize = rec[1].trim().parse().map_err(|_| Error::FeatureImport("bad col".into()))?;
        seen.insert((r, c));
        rows = rows.max(r + 1);
        cols = cols.max(c + 1);
    }
    if seen.is_empty() {
        return Err(Error::FeatureImport("no feature rows".into()));
    }
    Ok((rows, cols))
}

/// Z-scores every column (population std). Constant columns become zeros.
pub fn standardize(features: &FeatureMatrix) -> FeatureMatrix {
    let (n, d) = (features.n, features.d);
    let mut mean = vec![0.0f64; d];
    for row in features.rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += f64::from(*v);
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0f64; d];
    for row in features.rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let e = f64::from(*v) - m;
            *s += e * e;
        }
    }
    let std: Vec<f64> = var.iter().map(|s| (s / n as f64).sqrt()).collect();
    let data = features
        .rows()
        .flat_map(|row| {
            row.iter()
                .zip(mean.iter().zip(&std))
                .map(|(v, (m, s))| {
                    if *s > 1e-12 * m.abs().max(1.0) {
                        ((f64::from(*v) - m) / s) as f32
                    } else {
                        0.0
                    }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    FeatureMatrix {
        n,
        d,
        data,
        kind: features.kind,
    }
}
