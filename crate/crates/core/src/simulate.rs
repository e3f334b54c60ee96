//! Synthetic rare-object scenes and budgeted labeling simulations against a
//! ground-truth oracle.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::grid::{GridSpec, PatchRef, RasterScene};
use crate::rng::{derive_seed, seeded, trial_seed};
use crate::surface::{Sampler, UpdateEvent};

/// Parameters of a synthetic scene: Gaussian background components plus a
/// rare positive class, shifted in feature space and clumped on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSceneConfig {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    /// Fraction of cells holding the rare object.
    pub positive_fraction: f64,
    pub background_clusters: usize,
    /// Component means are drawn uniformly from [-range, range]^dim.
    pub background_mean_range: f64,
    pub background_spread: f64,
    /// Added to every feature coordinate of a positive cell.
    pub positive_shift: f64,
    pub positive_spread: f64,
    pub clumps: usize,
    /// Radius, in cells, around a clump center within which its positives land.
    pub clump_radius: f64,
    pub patch_size_px: usize,
    pub resolution_m_per_px: f64,
    /// Also paint a 3-band raster with `render_patch_px` pixels per cell side.
    pub render: bool,
    pub render_patch_px: usize,
    pub seed: u64,
}

impl Default for SyntheticSceneConfig {
    fn default() -> Self {
        Self {
            rows: 100,
            cols: 100,
            dim: 8,
            positive_fraction: 0.02,
            background_clusters: 3,
            background_mean_range: 10.0,
            background_spread: 1.0,
            positive_shift: 3.0,
            positive_spread: 1.0,
            clumps: 20,
            clump_radius: 2.0,
            patch_size_px: 128,
            resolution_m_per_px: 0.5,
            render: false,
            render_patch_px: 8,
            seed: 0,
        }
    }
}

impl SyntheticSceneConfig {
    /// Control scene: positives indistinguishable from background and
    /// scattered uniformly over the grid.
    pub fn adversarial_control(self) -> Self {
        let count = self.positive_count();
        Self {
            positive_shift: 0.0,
            positive_spread: self.background_spread,
            clumps: count.max(1),
            clump_radius: 0.0,
            ..self
        }
    }

    pub fn positive_count(&self) -> usize {
        (self.positive_fraction * (self.rows * self.cols) as f64).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.dim == 0 {
            return Err(Error::Config("grid and feature dimensions must be positive".into()));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive fraction must lie in (0, 1), got {}",
                self.positive_fraction
            )));
        }
        if self.positive_count() < 1 {
            return Err(Error::Config(
                "positive fraction yields no positive cells on this grid".into(),
            ));
        }
        if self.background_clusters == 0 || self.clumps == 0 {
            return Err(Error::Config("need at least one background cluster and one clump".into()));
        }
        if self.clumps > self.rows * self.cols {
            return Err(Error::Config("more clumps than cells".into()));
        }
        if !(self.background_spread >= 0.0 && self.positive_spread >= 0.0 && self.clump_radius >= 0.0) {
            return Err(Error::Config("spreads and clump radius must be non-negative".into()));
        }
        if self.render && self.render_patch_px == 0 {
            return Err(Error::Config("render patch size must be positive".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::new(self.rows, self.cols, self.patch_size_px, self.resolution_m_per_px)
    }
}

/// Per-cell binary labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    rows: usize,
    cols: usize,
    labels: Vec<bool>,
}

impl GroundTruth {
    pub fn new(rows: usize, cols: usize, labels: Vec<bool>) -> Result<Self> {
        if labels.len() != rows * cols {
            return Err(Error::Config(format!(
                "{} labels for a {rows}x{cols} grid",
                labels.len()
            )));
        }
        Ok(Self { rows, cols, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_positive(&self, id: usize) -> bool {
        self.labels[id]
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    pub fn label_at(&self, p: PatchRef) -> bool {
        self.labels[p.row * self.cols + p.col]
    }

    /// `row,col,label` with label 1 for positive.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["row", "col", "label"])?;
        for (id, l) in self.labels.iter().enumerate() {
            w.write_record([
                (id / self.cols).to_string(),
                (id % self.cols).to_string(),
                u8::from(*l).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<truth csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, grid: &GridSpec) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut labels = vec![None; grid.len()];
        for rec in rdr.records() {
            let rec = rec?;
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad integer `{s}` in truth CSV")))
            };
            let p = PatchRef::new(num(&rec[0])?, num(&rec[1])?);
            grid.check(p)?;
            labels[grid.id(p)] = Some(num(&rec[2])? != 0);
        }
        let labels = labels
            .into_iter()
            .enumerate()
            .map(|(id, l)| l.ok_or_else(|| Error::Config(format!("truth CSV is missing cell id {id}"))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(grid.rows, grid.cols, labels)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub grid: GridSpec,
    pub features: FeatureMatrix,
    pub truth: GroundTruth,
    /// Background component of every cell.
    pub components: Vec<usize>,
    pub raster: Option<RasterScene>,
}

/// Generates a scene. Clump centers are distinct cells drawn uniformly;
/// positives are dealt round-robin to clumps and scattered within the clump
/// radius. Each positive takes a background component drawn like any other
/// cell and is shifted by `positive_shift` in every coordinate.
pub fn generate_synthetic(cfg: &SyntheticSceneConfig) -> Result<SyntheticScene> {
    cfg.validate()?;
    let grid = cfg.grid()?;
    let n = grid.len();
    let d = cfg.dim;
    let mut rng = seeded(cfg.seed);

    let means: Vec<Vec<f64>> = (0..cfg.background_clusters)
        .map(|_| {
            (0..d)
                .map(|_| rng.random_range(-cfg.background_mean_range..=cfg.background_mean_range))
                .collect()
        })
        .collect();
    let components: Vec<usize> = (0..n)
        .map(|_| rng.random_range(0..cfg.background_clusters))
        .collect();

    let count = cfg.positive_count();
    let clumps = cfg.clumps.min(count);
    let centers: Vec<usize> = index::sample(&mut rng, n, clumps).into_vec();
    let mut labels = vec![false; n];
    for k in 0..count {
        let center = grid.patch(centers[k % clumps]);
        let mut radius = cfg.clump_radius;
        let placed = loop {
            let found = (0..64).find_map(|_| {
                let (dr, dc) = loop {
                    let dr = rng.random_range(-1.0..=1.0) * radius;
                    let dc = rng.random_range(-1.0..=1.0) * radius;
                    if dr * dr + dc * dc <= radius * radius {
                        break (dr, dc);
                    }
                };
                let r = center.row as f64 + dr.round();
                let c = center.col as f64 + dc.round();
                if r < 0.0 || c < 0.0 || r >= cfg.rows as f64 || c >= cfg.cols as f64 {
                    return None;
                }
                let id = r as usize * cfg.cols + c as usize;
                (!labels[id]).then_some(id)
            });
            match found {
                Some(id) => break id,
                None => radius += 1.0,
            }
        };
        labels[placed] = true;
    }

    let mut data = Vec::with_capacity(n * d);
    for id in 0..n {
        let mean = &means[components[id]];
        let (shift, spread) = if labels[id] {
            (cfg.positive_shift, cfg.positive_spread)
        } else {
            (0.0, cfg.background_spread)
        };
        for m in mean {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((m + shift + spread * z) as f32);
        }
    }
    let features = FeatureMatrix::new(n, d, data, FeatureKind::External)?;
    let truth = GroundTruth::new(cfg.rows, cfg.cols, labels)?;
    let raster = cfg
        .render
        .then(|| render_scene(cfg, &means, &components, &truth, derive_seed(cfg.seed, &[1])))
        .transpose()?;
    Ok(SyntheticScene {
        grid,
        features,
        truth,
        components,
        raster,
    })
}

/// Paints each cell with its component color plus per-pixel noise. A
/// positive cell also carries an object: a centered square, half the cell
/// wide, brightened by `25 * positive_shift` in every band.
fn render_scene(
    cfg: &SyntheticSceneConfig,
    means: &[Vec<f64>],
    components: &[usize],
    truth: &GroundTruth,
    seed: u64,
) -> Result<RasterScene> {
    let px = cfg.render_patch_px;
    let (w, h) = (cfg.cols * px, cfg.rows * px);
    let plane = w * h;
    let (obj_lo, obj_hi) = (px / 4, px - px / 4);
    let mut rng = seeded(seed);
    let mut data = vec![0.0f32; 3 * plane];
    for id in 0..components.len() {
        let (row, col) = (id / cfg.cols, id % cfg.cols);
        let mean = &means[components[id]];
        let color: Vec<f64> = (0..3)
            .map(|b| 128.0 + 10.0 * mean.get(b).copied().unwrap_or(0.0))
            .collect();
        let object = if truth.is_positive(id) { 25.0 * cfg.positive_shift } else { 0.0 };
        for y in 0..px {
            for x in 0..px {
                let inside = (obj_lo..obj_hi).contains(&y) && (obj_lo..obj_hi).contains(&x);
                let offset = (row * px + y) * w + col * px + x;
                for (b, c) in color.iter().enumerate() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    let v = c + if inside { object } else { 0.0 } + 4.0 * z;
                    data[b * plane + offset] = v.clamp(0.0, 255.0) as f32;
                }
            }
        }
    }
    let resolution = cfg.resolution_m_per_px * cfg.patch_size_px as f64 / px as f64;
    RasterScene::new(w, h, 3, resolution, data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub row: usize,
    pub col: usize,
    pub positive: bool,
    pub event: Option<UpdateEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub strategy: String,
    pub budget: usize,
    pub n_pos: usize,
    pub n_neg: usize,
    pub steps: Vec<StepRecord>,
    /// Step (1-based) at which the k-th positive was found.
    pub positive_steps: Vec<usize>,
}

impl SessionResult {
    pub fn samples_to_positives(&self, k: usize) -> Option<usize> {
        k.checked_sub(1).and_then(|i| self.positive_steps.get(i).copied())
    }

    /// Positives among the first `b` steps.
    pub fn positives_within(&self, b: usize) -> usize {
        self.positive_steps.partition_point(|s| *s <= b)
    }

    /// `step,row,col,label,strategy_event`.
    pub fn write_log_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["step", "row", "col", "label", "strategy_event"])?;
        for s in &self.steps {
            w.write_record([
                s.step.to_string(),
                s.row.to_string(),
                s.col.to_string(),
                if s.positive { "positive" } else { "negative" }.to_string(),
                s.event.map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<session log>", e))?;
        Ok(())
    }
}

/// Runs one budgeted labeling loop with the oracle answering from `truth`.
/// Ends early, without error, if the surface runs out of mass.
pub fn run_session(
    mut sampler: Sampler,
    truth: &GroundTruth,
    budget: usize,
    seed: u64,
) -> Result<SessionResult> {
    if budget == 0 {
        return Err(Error::Config("budget must be at least 1".into()));
    }
    let grid = *sampler.grid();
    if truth.len() != grid.len() {
        return Err(Error::ModelGridMismatch {
            model: truth.len(),
            grid: grid.len(),
        });
    }
    let mut rng = seeded(seed);
    let mut steps = Vec::with_capacity(budget.min(grid.len()));
    let mut positive_steps = Vec::new();
    for step in 1..=budget {
        let patch = match sampler.draw(&mut rng) {
            Ok(p) => p,
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        };
        let positive = truth.label_at(patch);
        let event = sampler.observe(patch, positive)?;
        if positive {
            positive_steps.push(step);
        }
        steps.push(StepRecord {
            step,
            row: patch.row,
            col: patch.col,
            positive,
            event,
        });
    }
    let n_pos = positive_steps.len();
    Ok(SessionResult {
        strategy: sampler.config().strategy.to_string(),
        budget,
        n_pos,
        n_neg: steps.len() - n_pos,
        steps,
        positive_steps,
    })
}

/// Draws until `m` positives are found; returns the number of draws, or the
/// number of cells drawn if the surface runs out first.
pub fn samples_to_positives(
    mut sampler: Sampler,
    truth: &GroundTruth,
    m: usize,
    seed: u64,
) -> Result<usize> {
    let mut rng = seeded(seed);
    let mut found = 0;
    let mut drawn = 0;
    while found < m {
        let patch = match sampler.draw(&mut rng) {
            Ok(p) => p,
            Err(Error::Exhausted) => break,
            Err(e) => return Err(e),
        };
        drawn += 1;
        let positive = truth.label_at(patch);
        sampler.observe(patch, positive)?;
        if positive {
            found += 1;
        }
    }
    Ok(drawn)
}

/// One named sampling method entered into an experiment.
#[derive(Debug, Clone)]
pub struct ExperimentArm {
    pub name: String,
    pub sampler: Sampler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: String,
    pub budget: usize,
    pub n_pos_mean: f64,
    /// Population standard deviation over trials.
    pub n_pos_std: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub strategy: String,
    pub trial: usize,
    pub seed: u64,
    /// n⁺ at each reported budget, in budget order.
    pub n_pos: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub budgets: Vec<usize>,
    pub rows: Vec<ReportRow>,
    pub trials: Vec<TrialOutcome>,
    /// Full session of every (arm, trial), run to the largest budget.
    #[serde(skip)]
    pub sessions: Vec<SessionResult>,
}

impl ExperimentReport {
    pub fn row(&self, strategy: &str, budget: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.strategy == strategy && r.budget == budget)
    }

    /// `strategy,budget,n_pos_mean,n_pos_std,trials`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["strategy", "budget", "n_pos_mean", "n_pos_std", "trials"])?;
        for r in &self.rows {
            w.write_record([
                r.strategy.clone(),
                r.budget.to_string(),
                format!("{:.4}", r.n_pos_mean),
                format!("{:.4}", r.n_pos_std),
                r.trials.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<report csv>", e))?;
        Ok(())
    }
}

/// Runs every arm for `trials` trials. Trial `t` of arm `s` is seeded with
/// `trial_seed(base_seed, s, t)`; since budgets do not enter the seed, each
/// arm/trial is run once to the largest budget and smaller budgets read its
/// prefix.
pub fn run_experiment(
    arms: &[ExperimentArm],
    budgets: &[usize],
    trials: usize,
    truth: &GroundTruth,
    base_seed: u64,
) -> Result<ExperimentReport> {
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    if budgets.is_empty() || budgets.contains(&0) {
        return Err(Error::Config("budgets must be non-empty and positive".into()));
    }
    let mut names = BTreeMap::new();
    for arm in arms {
        if names.insert(arm.name.as_str(), ()).is_some() {
            return Err(Error::Config(format!("duplicate arm name `{}`", arm.name)));
        }
    }
    let max_budget = *budgets.iter().max().expect("non-empty");
    let jobs: Vec<(usize, usize)> = (0..arms.len())
        .flat_map(|a| (0..trials).map(move |t| (a, t)))
        .collect();
    let sessions: Vec<(u64, SessionResult)> = jobs
        .par_iter()
        .map(|&(a, t)| {
            let arm = &arms[a];
            let seed = trial_seed(base_seed, &arm.name, t as u64);
            let mut session = run_session(arm.sampler.clone(), truth, max_budget, seed)?;
            session.strategy = arm.name.clone();
            Ok((seed, session))
        })
        .collect::<Result<_>>()?;

    let mut outcomes = Vec::with_capacity(jobs.len());
    for (&(a, t), (seed, session)) in jobs.iter().zip(&sessions) {
        outcomes.push(TrialOutcome {
            strategy: arms[a].name.clone(),
            trial: t,
            seed: *seed,
            n_pos: budgets.iter().map(|b| session.positives_within(*b)).collect(),
        });
    }
    let mut rows = Vec::new();
    for arm in arms {
        for (bi, &budget) in budgets.iter().enumerate() {
            let values: Vec<f64> = outcomes
                .iter()
                .filter(|o| o.strategy == arm.name)
                .map(|o| o.n_pos[bi] as f64)
                .collect();
            let (mean, std) = mean_std(&values);
            rows.push(ReportRow {
                strategy: arm.name.clone(),
                budget,
                n_pos_mean: mean,
                n_pos_std: std,
                trials,
            });
        }
    }
    Ok(ExperimentReport {
        budgets: budgets.to_vec(),
        rows,
        trials: outcomes,
        sessions: sessions.into_iter().map(|(_, s)| s).collect(),
    })
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
