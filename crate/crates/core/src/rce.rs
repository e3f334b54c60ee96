//! Regularized cross-entropy: labeled-pixel cross-entropy plus an entropy
//! penalty on unlabeled pixels, each averaged over its own mask and weighted
//! by the labeled fraction ρ.

use crate::error::{Error, Result};

/// Logits are row-major, `n` pixels by `c` classes. `targets[i]` is
/// `Some(class)` for labeled pixels and `None` for unlabeled ones, so the two
/// masks are disjoint and cover every pixel by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct RceBatch {
    n: usize,
    c: usize,
    logits: Vec<f64>,
    targets: Vec<Option<usize>>,
}

impl RceBatch {
    pub fn new(n: usize, c: usize, logits: Vec<f64>, targets: Vec<Option<usize>>) -> Result<Self> {
        if c < 2 {
            return Err(Error::Batch(format!("need at least 2 classes, got {c}")));
        }
        if n == 0 {
            return Err(Error::Batch("both masks are empty".into()));
        }
        if logits.len() != n * c {
            return Err(Error::SizeMismatch {
                expected: n * c,
                actual: logits.len(),
            });
        }
        if targets.len() != n {
            return Err(Error::SizeMismatch {
                expected: n,
                actual: targets.len(),
            });
        }
        if let Some(t) = targets.iter().flatten().find(|t| **t >= c) {
            return Err(Error::Batch(format!("target class {t} out of range for {c} classes")));
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Batch("logits must be finite".into()));
        }
        Ok(Self { n, c, logits, targets })
    }

    pub fn pixels(&self) -> usize {
        self.n
    }

    pub fn classes(&self) -> usize {
        self.c
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn targets(&self) -> &[Option<usize>] {
        &self.targets
    }

    pub fn labeled(&self) -> usize {
        self.targets.iter().filter(|t| t.is_some()).count()
    }

    /// ρ = |Y_L| / N.
    pub fn rho(&self) -> f64 {
        self.labeled() as f64 / self.n as f64
    }

    pub fn with_logits(&self, logits: Vec<f64>) -> Result<Self> {
        Self::new(self.n, self.c, logits, self.targets.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RceValue {
    pub j: f64,
    pub ce_term: f64,
    pub entropy_term: f64,
}

/// Numerically stable softmax and log-softmax of one logit row.
fn softmax(row: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let log_p: Vec<f64> = row.iter().map(|v| v - lse).collect();
    let p = log_p.iter().map(|l| l.exp()).collect();
    (p, log_p)
}

pub fn rce_loss(batch: &RceBatch) -> RceValue {
    let (mut ce, mut ent) = (0.0, 0.0);
    for (i, target) in batch.targets.iter().enumerate() {
        let (p, log_p) = softmax(&batch.logits[i * batch.c..(i + 1) * batch.c]);
        match target {
            Some(t) => ce -= log_p[*t],
            None => ent -= p.iter().zip(&log_p).map(|(p, l)| p * l).sum::<f64>(),
        }
    }
    let labeled = batch.labeled();
    let unlabeled = batch.n - labeled;
    let ce_term = if labeled > 0 { ce / labeled as f64 } else { 0.0 };
    let entropy_term = if unlabeled > 0 { ent / unlabeled as f64 } else { 0.0 };
    let rho = batch.rho();
    RceValue {
        j: rho * ce_term + (1.0 - rho) * entropy_term,
        ce_term,
        entropy_term,
    }
}

/// Gradient of J with respect to every logit, same layout as the logits.
pub fn rce_gradient(batch: &RceBatch) -> Vec<f64> {
    let c = batch.c;
    let labeled = batch.labeled();
    let unlabeled = batch.n - labeled;
    let rho = batch.rho();
    let mut grad = vec![0.0; batch.n * c];
    for (i, target) in batch.targets.iter().enumerate() {
        let (p, log_p) = softmax(&batch.logits[i * c..(i + 1) * c]);
        let g = &mut grad[i * c..(i + 1) * c];
        match target {
            Some(t) => {
                let scale = rho / labeled as f64;
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk = scale * (p[k] - if k == *t { 1.0 } else { 0.0 });
                }
            }
            None => {
                // dH/dp = -(1 + log p), pulled back through the softmax Jacobian.
                let scale = (1.0 - rho) / unlabeled as f64;
                let u: Vec<f64> = log_p.iter().map(|l| -(1.0 + l)).collect();
                let dot: f64 = p.iter().zip(&u).map(|(p, u)| p * u).sum();
                for (k, gk) in g.iter_mut().enumerate() {
                    *gk = scale * p[k] * (u[k] - dot);
                }
            }
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    fn central_diff(batch: &RceBatch, h: f64) -> Vec<f64> {
        (0..batch.logits.len())
            .map(|k| {
                let mut plus = batch.logits.clone();
                let mut minus = batch.logits.clone();
                plus[k] += h;
                minus[k] -= h;
                let jp = rce_loss(&batch.with_logits(plus).unwrap()).j;
                let jm = rce_loss(&batch.with_logits(minus).unwrap()).j;
                (jp - jm) / (2.0 * h)
            })
            .collect()
    }

    fn random_batch(seed: u64, n: usize, c: usize) -> RceBatch {
        let mut rng = seeded(seed);
        let logits = (0..n * c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let targets = (0..n)
            .map(|_| rng.random_bool(0.5).then(|| rng.random_range(0..c)))
            .collect();
        RceBatch::new(n, c, logits, targets).unwrap()
    }

    #[test]
    fn uniform_binary_entropy() {
        let b = RceBatch::new(1, 2, vec![0.0, 0.0], vec![None]).unwrap();
        let v = rce_loss(&b);
        assert!((v.entropy_term - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(v.j, v.entropy_term);
    }

    #[test]
    fn saturated_entropy_vanishes() {
        let b = RceBatch::new(1, 2, vec![30.0, -30.0], vec![None]).unwrap();
        assert!(rce_loss(&b).entropy_term < 1e-9);
    }

    #[test]
    fn all_labeled_is_mean_cross_entropy() {
        let b = RceBatch::new(2, 2, vec![1.0, 0.0, 0.0, 2.0], vec![Some(0), Some(0)]).unwrap();
        let ce0 = -(1.0f64.exp() / (1.0f64.exp() + 1.0)).ln();
        let ce1 = -(1.0 / (1.0 + 2.0f64.exp())).ln();
        let v = rce_loss(&b);
        assert!((v.j - (ce0 + ce1) / 2.0).abs() < 1e-12);
        assert_eq!(v.entropy_term, 0.0);
    }

    #[test]
    fn saturated_labeled_pixel_has_zero_gradient() {
        let b = RceBatch::new(1, 2, vec![800.0, -800.0], vec![Some(0)]).unwrap();
        assert!(rce_gradient(&b).iter().all(|g| *g == 0.0));
    }

    #[test]
    fn uniform_unlabeled_pixel_is_stationary() {
        let b = RceBatch::new(1, 3, vec![0.5; 3], vec![None]).unwrap();
        assert!(rce_gradient(&b).iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_batches() {
        assert!(RceBatch::new(0, 2, vec![], vec![]).is_err());
        assert!(RceBatch::new(1, 1, vec![0.0], vec![None]).is_err());
        assert!(RceBatch::new(1, 2, vec![0.0, 0.0], vec![Some(2)]).is_err());
        assert!(RceBatch::new(1, 2, vec![0.0], vec![None]).is_err());
    }

    #[test]
    fn five_by_three_gradient_check() {
        let b = random_batch(7, 5, 3);
        let g = rce_gradient(&b);
        let fd = central_diff(&b, 1e-5);
        let err = g.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
    }

    proptest! {
        #[test]
        fn loss_bounds(seed in 0u64..10_000, n in 1usize..12, c in 2usize..6) {
            let b = random_batch(seed, n, c);
            let v = rce_loss(&b);
            prop_assert!(v.j >= 0.0);
            prop_assert!(v.entropy_term >= 0.0 && v.entropy_term <= (c as f64).ln() + 1e-12);
            let rho = b.rho();
            prop_assert!((v.j - (rho * v.ce_term + (1.0 - rho) * v.entropy_term)).abs() < 1e-12);
        }
    }
}
