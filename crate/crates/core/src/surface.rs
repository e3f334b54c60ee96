//! Sampling surfaces: discrete distributions over grid cells, drawn from
//! without replacement and reweighted by online strategies.
//!
//! Probabilities are held as unnormalized weights in a sum tree, so a draw
//! or a single-cell update costs O(log n) and the distribution is always
//! normalized on read. A reweighting "P <- P + w" is applied on the
//! probability scale in effect when the triggering cell was drawn; the
//! drawn cell's mass and the added weight are renormalized together.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::ClusterModel;
use crate::error::{Error, Result};
use crate::grid::{GridSpec, PatchRef};

/// Binary sum tree over non-negative leaf weights.
#[derive(Debug, Clone, PartialEq)]
struct SumTree {
    len: usize,
    base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    fn new(weights: &[f64]) -> Self {
        let base = weights.len().next_power_of_two().max(1);
        let mut nodes = vec![0.0; 2 * base];
        nodes[base..base + weights.len()].copy_from_slice(weights);
        let mut tree = Self {
            len: weights.len(),
            base,
            nodes,
        };
        tree.rebuild();
        tree
    }

    fn rebuild(&mut self) {
        for i in (1..self.base).rev() {
            self.nodes[i] = self.nodes[2 * i] + self.nodes[2 * i + 1];
        }
    }

    fn total(&self) -> f64 {
        self.nodes[1]
    }

    fn get(&self, i: usize) -> f64 {
        self.nodes[self.base + i]
    }

    fn set(&mut self, i: usize, w: f64) {
        let mut node = self.base + i;
        self.nodes[node] = w;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
    }

    fn scale_all(&mut self, factor: f64) {
        for w in &mut self.nodes[self.base..self.base + self.len] {
            *w *= factor;
        }
        self.rebuild();
    }

    /// Leaf whose cumulative interval contains `u` in [0, total). Never
    /// descends into a zero-mass subtree.
    fn find(&self, mut u: f64) -> usize {
        let mut node = 1;
        while node < self.base {
            let (l, r) = (2 * node, 2 * node + 1);
            let go_left = if self.nodes[r] <= 0.0 {
                true
            } else if self.nodes[l] <= 0.0 {
                false
            } else {
                u < self.nodes[l]
            };
            if go_left {
                node = l;
            } else {
                u -= self.nodes[l];
                node = r;
            }
        }
        node - self.base
    }
}

/// A probability distribution over the cells of an H x W grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSurface {
    rows: usize,
    cols: usize,
    tree: SumTree,
    exhausted: Vec<bool>,
    drawn: Vec<usize>,
    w_init_max: f64,
    /// Normalizer in effect just before the most recent draw.
    update_scale: f64,
}

const RESCALE_ABOVE: f64 = 1e200;

impl SamplingSurface {
    /// Normalizes non-negative `weights` into a surface.
    pub fn from_weights(rows: usize, cols: usize, weights: &[f64]) -> Result<Self> {
        if rows * cols == 0 || weights.len() != rows * cols {
            return Err(Error::Config(format!(
                "surface needs {} weights for a {rows}x{cols} grid, got {}",
                rows * cols,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config("surface weights must be finite and >= 0".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Config("surface weights sum to zero".into()));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let w_init_max = probs.iter().copied().fold(0.0, f64::max);
        let tree = SumTree::new(&probs);
        Ok(Self {
            rows,
            cols,
            update_scale: tree.total(),
            tree,
            exhausted: vec![false; rows * cols],
            drawn: Vec::new(),
            w_init_max,
        })
    }

    /// Every cell at 1/(H·W).
    pub fn uniform(grid: &GridSpec) -> Self {
        let n = grid.len();
        Self::from_weights(grid.rows, grid.cols, &vec![1.0 / n as f64; n])
            .expect("non-empty grid")
    }

    /// Inverse cluster size weighting: P = (1/K) · (1/C) for a cell in a
    /// cluster of size C, with K the realized cluster count.
    pub fn cluster_weighted(grid: &GridSpec, model: &ClusterModel) -> Result<Self> {
        if model.n() != grid.len() {
            return Err(Error::ModelGridMismatch {
                model: model.n(),
                grid: grid.len(),
            });
        }
        let k = model.k_eff() as f64;
        let sizes = model.sizes();
        let probs: Vec<f64> = model
            .assignment()
            .iter()
            .map(|&l| 1.0 / k * (1.0 / sizes[l] as f64))
            .collect();
        let w_init_max = probs.iter().copied().fold(0.0, f64::max);
        let tree = SumTree::new(&probs);
        Ok(Self {
            rows: grid.rows,
            cols: grid.cols,
            update_scale: tree.total(),
            tree,
            exhausted: vec![false; grid.len()],
            drawn: Vec::new(),
            w_init_max,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest probability of the initial surface.
    pub fn w_init_max(&self) -> f64 {
        self.w_init_max
    }

    pub fn prob(&self, id: usize) -> f64 {
        let total = self.tree.total();
        if total > 0.0 {
            self.tree.get(id) / total
        } else {
            0.0
        }
    }

    /// Row-major probabilities.
    pub fn probs(&self) -> Vec<f64> {
        (0..self.len()).map(|id| self.prob(id)).collect()
    }

    pub fn is_exhausted(&self, id: usize) -> bool {
        self.exhausted[id]
    }

    /// Ids in the order they were drawn.
    pub fn drawn(&self) -> &[usize] {
        &self.drawn
    }

    /// True once no remaining cell carries probability mass.
    pub fn is_depleted(&self) -> bool {
        !(self.tree.total() > 0.0)
    }

    /// Draws a cell proportionally to the current probabilities, marks it
    /// exhausted, and renormalizes the remaining mass.
    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PatchRef> {
        let total = self.tree.total();
        if !(total > 0.0) {
            return Err(Error::Exhausted);
        }
        let u = rng.random::<f64>() * total;
        let id = self.tree.find(u);
        debug_assert!(!self.exhausted[id] && self.tree.get(id) > 0.0);
        self.update_scale = total;
        self.exhausted[id] = true;
        self.tree.set(id, 0.0);
        self.drawn.push(id);
        Ok(PatchRef::new(id / self.cols, id % self.cols))
    }

    fn boost(&mut self, ids: impl IntoIterator<Item = usize>, weight: f64) -> usize {
        let delta = weight * self.update_scale;
        let mut count = 0;
        for id in ids {
            if !self.exhausted[id] {
                self.tree.set(id, self.tree.get(id) + delta);
                count += 1;
            }
        }
        if self.tree.total() > RESCALE_ABOVE {
            let factor = 1.0 / self.tree.total();
            self.tree.scale_all(factor);
            self.update_scale *= factor;
        }
        count
    }

    /// Adds `weight` to every non-exhausted cell whose center lies within
    /// `radius_m` of `positive_at`, then renormalizes. Returns the number of
    /// cells boosted.
    pub fn apply_proximity_update(
        &mut self,
        grid: &GridSpec,
        positive_at: PatchRef,
        radius_m: f64,
        weight: f64,
    ) -> Result<usize> {
        self.check_grid(grid)?;
        grid.check(positive_at)?;
        let ids: Vec<usize> = grid
            .cells_within(positive_at, radius_m)
            .into_iter()
            .map(|p| grid.id(p))
            .collect();
        Ok(self.boost(ids, weight))
    }

    /// Adds `weight` to every non-exhausted cell sharing `positive_at`'s
    /// cluster, then renormalizes. Returns the number of cells boosted.
    pub fn apply_online_cluster_update(
        &mut self,
        model: &ClusterModel,
        positive_at: PatchRef,
        weight: f64,
    ) -> Result<usize> {
        if model.n() != self.len() {
            return Err(Error::ModelGridMismatch {
                model: model.n(),
                grid: self.len(),
            });
        }
        if positive_at.row >= self.rows || positive_at.col >= self.cols {
            return Err(Error::OutOfBounds {
                row: positive_at.row,
                col: positive_at.col,
                rows: self.rows,
                cols: self.cols,
            });
        }
        let label = model.label(positive_at.row * self.cols + positive_at.col);
        let ids: Vec<usize> = model
            .assignment()
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| i)
            .collect();
        Ok(self.boost(ids, weight))
    }

    fn check_grid(&self, grid: &GridSpec) -> Result<()> {
        if grid.rows != self.rows || grid.cols != self.cols {
            return Err(Error::ModelGridMismatch {
                model: self.len(),
                grid: grid.len(),
            });
        }
        Ok(())
    }

    pub fn snapshot(&self) -> SurfaceSnapshot {
        SurfaceSnapshot {
            h: self.rows,
            w: self.cols,
            probs: self.probs(),
            exhausted: self.drawn.clone(),
            w_init_max: self.w_init_max,
        }
    }

    /// Mean-pools the surface so neither side exceeds `max_dim`, then
    /// renormalizes the pooled grid to sum to one.
    pub fn pooled(&self, max_dim: usize) -> PooledSurface {
        let probs = self.probs();
        let max_dim = max_dim.max(1);
        let factor = self.rows.max(self.cols).div_ceil(max_dim).max(1);
        if factor == 1 {
            return PooledSurface {
                h: self.rows,
                w: self.cols,
                factor,
                probs,
            };
        }
        let h = self.rows.div_ceil(factor);
        let w = self.cols.div_ceil(factor);
        let mut sums = vec![0.0f64; h * w];
        let mut counts = vec![0usize; h * w];
        for r in 0..self.rows {
            for c in 0..self.cols {
                let cell = (r / factor) * w + c / factor;
                sums[cell] += probs[r * self.cols + c];
                counts[cell] += 1;
            }
        }
        let mut pooled: Vec<f64> = sums.iter().zip(&counts).map(|(s, n)| s / *n as f64).collect();
        let total: f64 = pooled.iter().sum();
        if total > 0.0 {
            pooled.iter_mut().for_each(|p| *p /= total);
        }
        PooledSurface {
            h,
            w,
            factor,
            probs: pooled,
        }
    }

    /// Checks the distribution invariants; returns a description of the
    /// first violation.
    pub fn check_invariants(&self, tol: f64) -> std::result::Result<(), String> {
        let probs = self.probs();
        let mut sum = 0.0;
        for (id, p) in probs.iter().enumerate() {
            if !(*p >= 0.0) {
                return Err(format!("cell {id} has probability {p}"));
            }
            if self.exhausted[id] && *p != 0.0 {
                return Err(format!("exhausted cell {id} has probability {p}"));
            }
            sum += p;
        }
        if !self.is_depleted() && (sum - 1.0).abs() > tol {
            return Err(format!("probabilities sum to {sum}"));
        }
        Ok(())
    }
}

/// JSON snapshot of a surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSnapshot {
    pub h: usize,
    pub w: usize,
    pub probs: Vec<f64>,
    pub exhausted: Vec<usize>,
    pub w_init_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledSurface {
    pub h: usize,
    pub w: usize,
    /// Side length, in cells, of each pooling block.
    pub factor: usize,
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    UniformOffline,
    ClusterOffline,
    Proximity,
    ClusterOnline,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::UniformOffline,
        Strategy::ClusterOffline,
        Strategy::Proximity,
        Strategy::ClusterOnline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::UniformOffline => "uniform_offline",
            Strategy::ClusterOffline => "cluster_offline",
            Strategy::Proximity => "proximity",
            Strategy::ClusterOnline => "cluster_online",
        }
    }

    pub fn needs_clusters(self) -> bool {
        matches!(self, Strategy::ClusterOffline | Strategy::ClusterOnline)
    }

    pub fn is_online(self) -> bool {
        matches!(self, Strategy::Proximity | Strategy::ClusterOnline)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

pub const DEFAULT_RADIUS_M: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    #[serde(default = "default_radius")]
    pub radius_m: f64,
    /// Reweight increment; the initial surface's maximum when absent.
    #[serde(default)]
    pub weight: Option<f64>,
}

fn default_radius() -> f64 {
    DEFAULT_RADIUS_M
}

impl StrategyConfig {
    pub fn new(strategy: Strategy) -> Self {
        Self {
            strategy,
            radius_m: DEFAULT_RADIUS_M,
            weight: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategy == Strategy::Proximity && !(self.radius_m > 0.0) {
            return Err(Error::Config("proximity radius must be positive".into()));
        }
        if let Some(w) = self.weight {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::Config(format!("reweight increment must be positive, got {w}")));
            }
        }
        Ok(())
    }
}

/// What an observed label did to the surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UpdateEvent {
    Proximity { cells: usize },
    Cluster { label: usize, cells: usize },
}

impl fmt::Display for UpdateEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UpdateEvent::Proximity { cells } => write!(f, "proximity_boost:{cells}"),
            UpdateEvent::Cluster { label, cells } => write!(f, "cluster_boost:{label}:{cells}"),
        }
    }
}

/// A surface bound to its strategy: draws cells and reacts to labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampler {
    config: StrategyConfig,
    grid: GridSpec,
    model: Option<Arc<ClusterModel>>,
    surface: SamplingSurface,
    weight: f64,
}

impl Sampler {
    pub fn new(
        config: StrategyConfig,
        grid: GridSpec,
        model: Option<Arc<ClusterModel>>,
    ) -> Result<Self> {
        config.validate()?;
        let surface = if config.strategy.needs_clusters() {
            let model = model.as_deref().ok_or_else(|| {
                Error::Config(format!("strategy {} requires a cluster model", config.strategy))
            })?;
            SamplingSurface::cluster_weighted(&grid, model)?
        } else {
            SamplingSurface::uniform(&grid)
        };
        let weight = config.weight.unwrap_or(surface.w_init_max());
        Ok(Self {
            config,
            grid,
            model,
            surface,
            weight,
        })
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn surface(&self) -> &SamplingSurface {
        &self.surface
    }

    /// Effective reweight increment.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn draw<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<PatchRef> {
        self.surface.draw(rng)
    }

    /// Applies the strategy's reaction to a label. Only positives under an
    /// online strategy change the surface.
    pub fn observe(&mut self, patch: PatchRef, positive: bool) -> Result<Option<UpdateEvent>> {
        if !positive {
            return Ok(None);
        }
        match self.config.strategy {
            Strategy::Proximity => {
                let cells = self.surface.apply_proximity_update(
                    &self.grid,
                    patch,
                    self.config.radius_m,
                    self.weight,
                )?;
                Ok(Some(UpdateEvent::Proximity { cells }))
            }
            Strategy::ClusterOnline => {
                let model = self.model.as_deref().expect("checked at construction");
                let cells = self
                    .surface
                    .apply_online_cluster_update(model, patch, self.weight)?;
                let label = model.label(self.grid.id(patch));
                Ok(Some(UpdateEvent::Cluster { label, cells }))
            }
            Strategy::UniformOffline | Strategy::ClusterOffline => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use super::Strategy;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn uniform_values() {
        let s = SamplingSurface::uniform(&GridSpec::new(10, 10, 1, 1.0).unwrap());
        assert!(s.probs().iter().all(|p| close(*p, 0.01)));
        assert!(close(s.w_init_max(), 0.01));
        let one = SamplingSurface::uniform(&GridSpec::new(1, 1, 1, 1.0).unwrap());
        assert_eq!(one.probs(), vec![1.0]);
    }

    #[test]
    fn inverse_cluster_size() {
        let grid = GridSpec::new(2, 2, 1, 1.0).unwrap();
        let model = ClusterModel::from_assignment(vec![0, 0, 0, 1], None).unwrap();
        let s = SamplingSurface::cluster_weighted(&grid, &model).unwrap();
        let p = s.probs();
        for id in 0..3 {
            assert!(close(p[id], 1.0 / 6.0));
        }
        assert!(close(p[3], 0.5));
        assert!(close(s.w_init_max(), 0.5));
        let single = ClusterModel::from_assignment(vec![0; 4], None).unwrap();
        let s = SamplingSurface::cluster_weighted(&grid, &single).unwrap();
        assert!(s.probs().iter().all(|p| close(*p, 0.25)));
        let wrong = ClusterModel::from_assignment(vec![0, 1, 0], None).unwrap();
        assert!(SamplingSurface::cluster_weighted(&grid, &wrong).is_err());
    }

    #[test]
    fn draws_exhaust_support() {
        let mut s = SamplingSurface::from_weights(1, 3, &[0.5, 0.5, 0.0]).unwrap();
        let mut rng = seeded(1);
        let mut got = vec![s.draw(&mut rng).unwrap().col, s.draw(&mut rng).unwrap().col];
        got.sort();
        assert_eq!(got, vec![0, 1]);
        assert!(matches!(s.draw(&mut rng), Err(Error::Exhausted)));
    }

    #[test]
    fn point_mass_always_first() {
        for seed in 0..20 {
            let mut s = SamplingSurface::from_weights(1, 3, &[1.0, 0.0, 0.0]).unwrap();
            assert_eq!(s.draw(&mut seeded(seed)).unwrap().col, 0);
        }
    }

    #[test]
    fn proximity_hand_example() {
        let grid = GridSpec::new(3, 3, 1, 1.0).unwrap();
        let mut s = SamplingSurface::uniform(&grid);
        forced_draw(&mut s, 0);
        let boosted = s
            .apply_proximity_update(&grid, PatchRef::new(0, 0), 1.5, 1.0 / 9.0)
            .unwrap();
        assert_eq!(boosted, 3);
        let p = s.probs();
        assert_eq!(p[0], 0.0);
        for id in [1, 3, 4] {
            assert!(close(p[id], 2.0 / 11.0), "cell {id}: {}", p[id]);
        }
        for id in [2, 5, 6, 7, 8] {
            assert!(close(p[id], 1.0 / 11.0), "cell {id}: {}", p[id]);
        }
    }

    #[test]
    fn proximity_small_radius_and_exhausted_neighbor() {
        let grid = GridSpec::new(3, 3, 1, 1.0).unwrap();
        let mut s = SamplingSurface::uniform(&grid);
        s.draw(&mut seeded(3)).unwrap();
        let first = s.drawn()[0];
        let before = s.probs();
        let n = s
            .apply_proximity_update(&grid, grid.patch(first), 0.5, 1.0 / 9.0)
            .unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.probs(), before);

        s.draw(&mut seeded(4)).unwrap();
        let second = s.drawn()[1];
        s.apply_proximity_update(&grid, grid.patch(second), 10.0, 1.0).unwrap();
        assert_eq!(s.prob(first), 0.0);
        assert_eq!(s.prob(second), 0.0);
        s.check_invariants(1e-12).unwrap();
    }

    fn forced_draw(s: &mut SamplingSurface, id: usize) {
        s.update_scale = s.tree.total();
        s.exhausted[id] = true;
        s.tree.set(id, 0.0);
        s.drawn.push(id);
    }

    #[test]
    fn online_cluster_hand_example() {
        let grid = GridSpec::new(1, 4, 1, 1.0).unwrap();
        let model = ClusterModel::from_assignment(vec![0, 0, 1, 1], None).unwrap();
        let mut s = SamplingSurface::cluster_weighted(&grid, &model).unwrap();
        forced_draw(&mut s, 0);
        s.apply_online_cluster_update(&model, PatchRef::new(0, 0), 0.25).unwrap();
        let p = s.probs();
        assert_eq!(p[0], 0.0);
        assert!(close(p[1], 0.5));
        assert!(close(p[2], 0.25));
        assert!(close(p[3], 0.25));
    }

    #[test]
    fn online_update_on_exhausted_cluster_is_noop() {
        let grid = GridSpec::new(1, 3, 1, 1.0).unwrap();
        let model = ClusterModel::from_assignment(vec![0, 1, 1], None).unwrap();
        let mut s = SamplingSurface::cluster_weighted(&grid, &model).unwrap();
        forced_draw(&mut s, 0);
        let before = s.probs();
        let n = s.apply_online_cluster_update(&model, PatchRef::new(0, 0), 0.5).unwrap();
        assert_eq!(n, 0);
        assert_eq!(s.probs(), before);
        assert!(close(before[1], 0.5));
    }

    #[test]
    fn sampler_negative_labels_never_reweight() {
        let grid = GridSpec::new(4, 4, 1, 1.0).unwrap();
        let mut sampler = Sampler::new(StrategyConfig::new(Strategy::Proximity), grid, None).unwrap();
        let mut rng = seeded(0);
        let p = sampler.draw(&mut rng).unwrap();
        let before = sampler.surface().probs();
        assert_eq!(sampler.observe(p, false).unwrap(), None);
        assert_eq!(sampler.surface().probs(), before);
        assert!(sampler.observe(p, true).unwrap().is_some());
    }

    #[test]
    fn sampler_requires_model_for_cluster_strategies() {
        let grid = GridSpec::new(2, 2, 1, 1.0).unwrap();
        assert!(Sampler::new(StrategyConfig::new(Strategy::ClusterOnline), grid, None).is_err());
        assert!(Sampler::new(StrategyConfig::new(Strategy::UniformOffline), grid, None).is_ok());
    }

    #[test]
    fn pooling() {
        let grid = GridSpec::new(4, 4, 1, 1.0).unwrap();
        let s = SamplingSurface::uniform(&grid);
        assert_eq!(s.pooled(8).probs, s.probs());
        let p = s.pooled(2);
        assert_eq!((p.h, p.w, p.factor), (2, 2, 2));
        assert!(p.probs.iter().all(|v| close(*v, 0.25)));
        let odd = SamplingSurface::uniform(&GridSpec::new(5, 3, 1, 1.0).unwrap()).pooled(2);
        assert!((odd.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(odd.h.max(odd.w) <= 2);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.as_str().parse::<Strategy>().unwrap(), s);
        }
    }

    proptest! {
        #[test]
        fn tree_draw_never_returns_zero_mass(seed in any::<u64>(), zeros in proptest::collection::vec(any::<bool>(), 1..40)) {
            let weights: Vec<f64> = zeros.iter().enumerate().map(|(i, z)| if *z { 0.0 } else { 1.0 + i as f64 }).collect();
            prop_assume!(weights.iter().any(|w| *w > 0.0));
            let mut s = SamplingSurface::from_weights(1, weights.len(), &weights).unwrap();
            let mut rng = seeded(seed);
            let positive = weights.iter().filter(|w| **w > 0.0).count();
            let mut seen = std::collections::HashSet::new();
            for _ in 0..positive {
                let p = s.draw(&mut rng).unwrap();
                prop_assert!(weights[p.col] > 0.0);
                prop_assert!(seen.insert(p.col));
                prop_assert!(s.check_invariants(1e-9).is_ok());
            }
            prop_assert!(s.draw(&mut rng).is_err());
        }
    }
}
