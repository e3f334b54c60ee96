//! Unsupervised model selection: search featurizer and clustering settings
//! for the smallest absolute silhouette score, and measure how well that
//! score tracks the cost of finding positives.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster, silhouette, Algorithm, ClusterModel, ClusteringConfig, DEFAULT_SAMPLE_CAP};
use crate::error::{Error, Result};
use crate::features::{FeatureKind, FeatureMatrix};
use crate::grid::GridSpec;
use crate::rng::{derive_seed, seeded};
use crate::simulate::{samples_to_positives, GroundTruth};
use crate::surface::{Sampler, Strategy, StrategyConfig};

/// Feature matrices keyed by the featurizer that produced them.
pub type FeatureSet = BTreeMap<FeatureKind, FeatureMatrix>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    /// Featurizers to choose from; empty means every matrix supplied.
    pub features: Vec<FeatureKind>,
    pub algorithms: Vec<Algorithm>,
    pub k_min: usize,
    pub k_max: usize,
    /// Searched on a log scale; derived from pairwise distances when absent.
    pub eps_range: Option<(f64, f64)>,
    pub eta_min: usize,
    pub eta_max: usize,
    pub trials: usize,
    pub seed: u64,
    /// Silhouette subsample size, shared by every trial.
    pub sample_cap: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            features: Vec::new(),
            algorithms: vec![Algorithm::Kmeans, Algorithm::BisectingKmeans, Algorithm::Dbscan],
            k_min: 2,
            k_max: 20,
            eps_range: None,
            eta_min: 2,
            eta_max: 20,
            trials: 30,
            seed: 0,
            sample_cap: DEFAULT_SAMPLE_CAP,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trial budget must be at least 1".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("search space has no algorithms".into()));
        }
        if self.k_min < 2 || self.k_min > self.k_max {
            return Err(Error::Config(format!(
                "invalid K range [{}, {}]",
                self.k_min, self.k_max
            )));
        }
        if self.eta_min == 0 || self.eta_min > self.eta_max {
            return Err(Error::Config(format!(
                "invalid eta range [{}, {}]",
                self.eta_min, self.eta_max
            )));
        }
        if let Some((lo, hi)) = self.eps_range {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("invalid eps range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    fn explore_trials(&self) -> usize {
        self.trials.div_ceil(2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub feature: FeatureKind,
    pub config: ClusteringConfig,
    pub k_eff: usize,
    /// Absent when the clustering has fewer than two clusters.
    pub silhouette: Option<f64>,
    pub objective: f64,
    pub wall_ms: f64,
    /// Mean draws to reach the target positive count (sweeps only).
    pub cost_samples: Option<f64>,
}

impl TrialRecord {
    pub fn is_degenerate(&self) -> bool {
        self.silhouette.is_none()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TuneResult {
    pub best: usize,
    pub trials: Vec<TrialRecord>,
}

impl TuneResult {
    pub fn best(&self) -> &TrialRecord {
        &self.trials[self.best]
    }

    /// `trial,feature,algo,K,eps,eta,k_eff,silhouette,objective,cost_samples`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        write_trial_log(&self.trials, writer)
    }
}

pub fn write_trial_log<W: Write>(trials: &[TrialRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "trial", "feature", "algo", "K", "eps", "eta", "k_eff", "silhouette", "objective",
        "cost_samples",
    ])?;
    for t in trials {
        let dbscan = t.config.algorithm == Algorithm::Dbscan;
        let opt = |s: String, show: bool| if show { s } else { String::new() };
        w.write_record([
            t.trial.to_string(),
            t.feature.to_string(),
            t.config.algorithm.as_str().to_string(),
            opt(t.config.k.to_string(), !dbscan),
            opt(format!("{:.6}", t.config.eps), dbscan),
            opt(t.config.min_neighbors.to_string(), dbscan),
            t.k_eff.to_string(),
            t.silhouette.map(|s| format!("{s:.6}")).unwrap_or_default(),
            format!("{:.6}", t.objective),
            t.cost_samples.map(|c| format!("{c:.3}")).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trial log>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
struct Candidate {
    feature: FeatureKind,
    config: ClusteringConfig,
}

impl Candidate {
    /// Identity of the parameters that actually affect the fit.
    fn key(&self) -> (FeatureKind, Algorithm, u64, usize) {
        match self.config.algorithm {
            Algorithm::Dbscan => (
                self.feature,
                Algorithm::Dbscan,
                self.config.eps.to_bits(),
                self.config.min_neighbors,
            ),
            a => (self.feature, a, 0, self.config.k),
        }
    }
}

struct Space<'a> {
    spec: &'a SearchSpace,
    features: Vec<FeatureKind>,
    k_max: usize,
    eps: BTreeMap<FeatureKind, (f64, f64)>,
}

impl<'a> Space<'a> {
    fn new(set: &FeatureSet, spec: &'a SearchSpace) -> Result<Self> {
        spec.validate()?;
        let features: Vec<FeatureKind> = if spec.features.is_empty() {
            set.keys().copied().collect()
        } else {
            spec.features.clone()
        };
        if features.is_empty() {
            return Err(Error::Config("no feature matrices supplied".into()));
        }
        let mut n = None;
        let mut eps = BTreeMap::new();
        for f in &features {
            let m = set
                .get(f)
                .ok_or_else(|| Error::Config(format!("no `{f}` feature matrix supplied")))?;
            if *n.get_or_insert(m.n()) != m.n() {
                return Err(Error::Config("feature matrices cover different grids".into()));
            }
            let range = match spec.eps_range {
                Some(r) => r,
                None if spec.algorithms.contains(&Algorithm::Dbscan) => {
                    default_eps_range(m, derive_seed(spec.seed, &[0xE95]))
                }
                None => (1.0, 1.0),
            };
            eps.insert(*f, range);
        }
        let n = n.expect("non-empty");
        if n < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: n });
        }
        Ok(Self {
            spec,
            features,
            k_max: spec.k_max.min(n),
            eps,
        })
    }

    fn build(&self, feature: FeatureKind, algorithm: Algorithm, k: usize, eps: f64, eta: usize) -> Candidate {
        let config = ClusteringConfig {
            algorithm,
            k,
            eps,
            min_neighbors: eta,
            seed: self.spec.seed,
            ..ClusteringConfig::default()
        };
        Candidate { feature, config }
    }

    fn log_lerp((lo, hi): (f64, f64), u: f64) -> f64 {
        (lo.ln() + u * (hi.ln() - lo.ln())).exp().clamp(lo, hi)
    }

    fn pick<T: Copy>(items: &[T], u: f64) -> T {
        items[((u * items.len() as f64) as usize).min(items.len() - 1)]
    }

    fn int_in(lo: usize, hi: usize, u: f64) -> usize {
        (lo + (u * (hi - lo + 1) as f64) as usize).min(hi)
    }

    /// Quasi-random point `t` of a shifted Halton sequence.
    fn explore(&self, t: usize, shift: &[f64; 5]) -> Candidate {
        let u: Vec<f64> = HALTON_BASES
            .iter()
            .zip(shift)
            .map(|(b, s)| (radical_inverse(t as u64 + 1, *b) + s).fract())
            .collect();
        let feature = Self::pick(&self.features, u[0]);
        self.build(
            feature,
            Self::pick(&self.spec.algorithms, u[1]),
            Self::int_in(self.spec.k_min, self.k_max, u[2]),
            Self::log_lerp(self.eps[&feature], u[3]),
            Self::int_in(self.spec.eta_min, self.spec.eta_max, u[4]),
        )
    }

    /// Random neighbor of `base`; `spread` widens the integer steps.
    fn perturb<R: Rng>(&self, base: &Candidate, spread: i64, rng: &mut R) -> Candidate {
        let mut feature = base.feature;
        if self.features.len() > 1 && rng.random_bool(0.15) {
            feature = self.features[rng.random_range(0..self.features.len())];
        }
        let mut algorithm = base.config.algorithm;
        if self.spec.algorithms.len() > 1 && rng.random_bool(0.15) {
            algorithm = self.spec.algorithms[rng.random_range(0..self.spec.algorithms.len())];
        }
        let step = |v: usize, lo: usize, hi: usize, rng: &mut R| {
            (v as i64 + rng.random_range(-spread..=spread)).clamp(lo as i64, hi as i64) as usize
        };
        let k = step(base.config.k, self.spec.k_min, self.k_max, rng);
        let eta = step(base.config.min_neighbors, self.spec.eta_min, self.spec.eta_max, rng);
        let (lo, hi) = self.eps[&feature];
        let jitter: f64 = Normal::new(0.0, 0.3).expect("valid").sample(rng);
        let eps = (base.config.eps.clamp(lo, hi) * (jitter * spread as f64 / 2.0).exp()).clamp(lo, hi);
        self.build(feature, algorithm, k, eps, eta)
    }
}

const HALTON_BASES: [u64; 5] = [2, 3, 5, 7, 11];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// [q01, q50] of pairwise distances over a seeded subsample of at most 500
/// points.
pub fn default_eps_range(features: &FeatureMatrix, seed: u64) -> (f64, f64) {
    let n = features.n();
    let ids: Vec<usize> = if n > 500 {
        index::sample(&mut seeded(seed), n, 500).into_vec()
    } else {
        (0..n).collect()
    };
    let mut dists = Vec::with_capacity(ids.len() * ids.len() / 2);
    for (a, &i) in ids.iter().enumerate() {
        for &j in &ids[a + 1..] {
            let d: f64 = features
                .row(i)
                .iter()
                .zip(features.row(j))
                .map(|(x, y)| (f64::from(*x) - f64::from(*y)).powi(2))
                .sum();
            dists.push(d.sqrt());
        }
    }
    if dists.is_empty() {
        return (1.0, 1.0);
    }
    dists.sort_by(f64::total_cmp);
    let q = |p: f64| dists[((p * (dists.len() - 1) as f64).round() as usize).min(dists.len() - 1)];
    let hi = q(0.5);
    let lo = q(0.01);
    if hi <= 0.0 {
        return (1e-6, 1e-6);
    }
    let lo = if lo > 0.0 { lo } else { hi * 1e-3 };
    (lo, hi)
}

fn evaluate(
    trial: usize,
    cand: &Candidate,
    set: &FeatureSet,
    spec: &SearchSpace,
) -> Result<(TrialRecord, ClusterModel)> {
    let start = Instant::now();
    let features = &set[&cand.feature];
    let model = cluster(features, &cand.config)?;
    let k_eff = model.k_eff();
    let silhouette = if k_eff >= 2 {
        match silhouette(features, &model, spec.sample_cap, derive_seed(spec.seed, &[0x5111])) {
            Ok(s) => Some(s.score),
            Err(Error::SingleCluster) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let record = TrialRecord {
        trial,
        feature: cand.feature,
        config: cand.config.clone(),
        k_eff,
        silhouette,
        objective: silhouette.map_or(1.0, f64::abs),
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
        cost_samples: None,
    };
    Ok((record, model))
}

/// Lowest objective wins; valid configs beat degenerate ones at equal
/// objective; remaining ties go to the earliest trial.
fn best_index(trials: &[TrialRecord]) -> usize {
    trials
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.objective
                .total_cmp(&b.objective)
                .then(a.is_degenerate().cmp(&b.is_degenerate()))
                .then(a.trial.cmp(&b.trial))
        })
        .map(|(i, _)| i)
        .expect("at least one trial")
}

fn search(set: &FeatureSet, spec: &SearchSpace) -> Result<(Vec<TrialRecord>, Vec<ClusterModel>)> {
    let space = Space::new(set, spec)?;
    let mut shift_rng = seeded(derive_seed(spec.seed, &[0x4A17]));
    let shift: [f64; 5] = std::array::from_fn(|_| shift_rng.random::<f64>());
    let explore = spec.explore_trials();
    let candidates: Vec<Candidate> = (0..explore).map(|t| space.explore(t, &shift)).collect();
    let evaluated: Vec<(TrialRecord, ClusterModel)> = candidates
        .par_iter()
        .enumerate()
        .map(|(t, c)| evaluate(t, c, set, spec))
        .collect::<Result<_>>()?;
    let mut seen: HashSet<_> = candidates.iter().map(Candidate::key).collect();
    let mut cands = candidates;
    let (mut trials, mut models): (Vec<_>, Vec<_>) = evaluated.into_iter().unzip();
    for t in explore..spec.trials {
        let base = &cands[best_index(&trials)];
        let mut rng = seeded(derive_seed(spec.seed, &[t as u64]));
        let mut cand = space.perturb(base, 2, &mut rng);
        for attempt in 0..32 {
            if !seen.contains(&cand.key()) {
                break;
            }
            cand = space.perturb(base, 2 + attempt / 4, &mut rng);
        }
        seen.insert(cand.key());
        let (record, model) = evaluate(t, &cand, set, spec)?;
        trials.push(record);
        models.push(model);
        cands.push(cand);
    }
    Ok((trials, models))
}

/// Evaluates `space.trials` configurations and returns the one with the
/// smallest |s̄|. The first half are quasi-random and evaluated in parallel;
/// the rest perturb the best configuration found so far.
pub fn tune(set: &FeatureSet, space: &SearchSpace) -> Result<TuneResult> {
    let (trials, _) = search(set, space)?;
    Ok(TuneResult {
        best: best_index(&trials),
        trials,
    })
}

/// Rebuilds the clustering of a trial record.
pub fn refit(set: &FeatureSet, record: &TrialRecord) -> Result<ClusterModel> {
    let features = set
        .get(&record.feature)
        .ok_or_else(|| Error::Config(format!("no `{}` feature matrix supplied", record.feature)))?;
    cluster(features, &record.config)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepResult {
    pub trials: Vec<TrialRecord>,
    /// Spearman correlation of |s̄| against cost over non-degenerate trials.
    pub spearman: Option<f64>,
}

/// Runs the search, then for every trial draws from its cluster-weighted
/// offline surface until `m` positives are found, averaging over `seeds`
/// simulations. Seed `s` is shared across trials.
pub fn sweep_correlation(
    set: &FeatureSet,
    truth: &GroundTruth,
    grid: &GridSpec,
    space: &SearchSpace,
    m: usize,
    seeds: usize,
) -> Result<SweepResult> {
    if m == 0 || m > truth.positives() {
        return Err(Error::NotEnoughPositives {
            requested: m,
            available: truth.positives(),
        });
    }
    if seeds < 3 {
        return Err(Error::Config(format!("need at least 3 simulation seeds, got {seeds}")));
    }
    if truth.len() != grid.len() {
        return Err(Error::ModelGridMismatch {
            model: truth.len(),
            grid: grid.len(),
        });
    }
    let (mut trials, models) = search(set, space)?;
    let costs: Vec<f64> = models
        .into_par_iter()
        .map(|model| {
            let model = Arc::new(model);
            let sampler = Sampler::new(
                StrategyConfig::new(Strategy::ClusterOffline),
                *grid,
                Some(model),
            )?;
            let total = (0..seeds)
                .map(|s| {
                    let seed = derive_seed(space.seed, &[0xC057, s as u64]);
                    samples_to_positives(sampler.clone(), truth, m, seed)
                })
                .sum::<Result<usize>>()?;
            Ok(total as f64 / seeds as f64)
        })
        .collect::<Result<_>>()?;
    for (t, c) in trials.iter_mut().zip(costs) {
        t.cost_samples = Some(c);
    }
    let (x, y): (Vec<f64>, Vec<f64>) = trials
        .iter()
        .filter(|t| !t.is_degenerate())
        .map(|t| (t.objective, t.cost_samples.expect("set above")))
        .unzip();
    Ok(SweepResult {
        spearman: spearman(&x, &y),
        trials,
    })
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|a, b| v[*a].total_cmp(&v[*b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` for fewer than two pairs or a constant
/// input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = rx.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
