//! Probability vectors over tasks and the math every policy shares.
//!
//! A [`PolicyDistribution`] is the single currency exchanged between
//! policies, the environment loop, and the estimators. Construction always
//! goes through [`validate_distribution`] so downstream code can assume the
//! entries are non-negative and sum to one.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Absolute tolerance on `|Σp − 1|`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Entries down to `-NEGATIVE_TOLERANCE` are treated as rounding noise.
pub const NEGATIVE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("distribution is empty")]
    Empty,
    #[error("entry {index} is negative ({value})")]
    NegativeProbability { index: usize, value: f64 },
    #[error("entries sum to {sum}, expected 1")]
    NotNormalized { sum: f64 },
    #[error("input contains a non-finite value at index {index}")]
    NonFiniteInput { index: usize },
}

/// Index of a task (arm) in `0..N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub usize);

impl TaskId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for TaskId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A validated probability vector over `N` tasks.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct PolicyDistribution {
    probs: Vec<f64>,
}

impl<'de> Deserialize<'de> for PolicyDistribution {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let probs = Vec::<f64>::deserialize(deserializer)?;
        validate_distribution(probs).map_err(serde::de::Error::custom)
    }
}

impl PolicyDistribution {
    /// Uniform distribution over `n` tasks. Panics if `n == 0`.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution needs at least one task");
        Self {
            probs: vec![1.0 / n as f64; n],
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, task: TaskId) -> f64 {
        self.probs[task.0]
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.probs
    }

    /// Total-variation distance `½ Σ |p_k − q_k|`. Panics on length mismatch.
    pub fn total_variation(&self, other: &PolicyDistribution) -> f64 {
        assert_eq!(self.len(), other.len(), "distribution length mismatch");
        0.5 * self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(p, q)| (p - q).abs())
            .sum::<f64>()
    }
}

impl std::ops::Index<usize> for PolicyDistribution {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.probs[index]
    }
}

/// Checks `v` against the distribution invariants and wraps it.
///
/// Tiny negative entries (≥ −1e-12) are clamped to zero.
pub fn validate_distribution(v: Vec<f64>) -> Result<PolicyDistribution, DistributionError> {
    if v.is_empty() {
        return Err(DistributionError::Empty);
    }
    let mut probs = v;
    for (index, p) in probs.iter_mut().enumerate() {
        if !p.is_finite() {
            return Err(DistributionError::NonFiniteInput { index });
        }
        if *p < -NEGATIVE_TOLERANCE {
            return Err(DistributionError::NegativeProbability { index, value: *p });
        }
        if *p < 0.0 {
            *p = 0.0;
        }
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > NORMALIZATION_TOLERANCE {
        return Err(DistributionError::NotNormalized { sum });
    }
    Ok(PolicyDistribution { probs })
}

/// `log Σ exp(x_i)` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Numerically safe softmax of a logit vector.
pub fn softmax(omega: &[f64]) -> Result<PolicyDistribution, DistributionError> {
    if omega.is_empty() {
        return Err(DistributionError::Empty);
    }
    if let Some(index) = omega.iter().position(|w| !w.is_finite()) {
        return Err(DistributionError::NonFiniteInput { index });
    }
    let max = omega.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = omega.iter().map(|w| (w - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    validate_distribution(exps.into_iter().map(|e| e / total).collect())
}

/// Shannon entropy in nats, with `0 · ln 0 = 0`.
pub fn entropy(dist: &PolicyDistribution) -> f64 {
    -dist
        .probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum::<f64>()
}

/// Draws a task by inverse CDF over the cumulative sums.
///
/// One uniform draw per call, so the stream position only depends on the
/// number of calls. Ties resolve to the lowest index and zero-probability
/// tasks are never returned.
pub fn sample_task<R: Rng + ?Sized>(dist: &PolicyDistribution, rng: &mut R) -> TaskId {
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    let mut last_supported = 0;
    for (k, &p) in dist.probs.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        last_supported = k;
        if u < cumulative {
            return TaskId(k);
        }
    }
    // Only reachable when rounding leaves Σp slightly below u.
    TaskId(last_supported)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn validate_accepts_uniform_and_one_hot() {
        assert!(validate_distribution(vec![0.25; 4]).is_ok());
        assert!(validate_distribution(vec![1.0, 0.0, 0.0]).is_ok());
    }

    #[test]
    fn validate_rejects_bad_vectors() {
        assert!(matches!(
            validate_distribution(vec![0.5, 0.6]),
            Err(DistributionError::NotNormalized { .. })
        ));
        assert_eq!(validate_distribution(vec![]), Err(DistributionError::Empty));
        assert!(matches!(
            validate_distribution(vec![1.1, -0.1]),
            Err(DistributionError::NegativeProbability { index: 1, .. })
        ));
        let clamped = validate_distribution(vec![1.0, -1e-13]).unwrap();
        assert_eq!(clamped.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_examples() {
        let d = softmax(&[0.0; 4]).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 0.25).abs() < 1e-15));
        let d = softmax(&[7.5; 3]).unwrap();
        assert!(d.probs().iter().all(|&p| (p - 1.0 / 3.0).abs() < 1e-15));
        let d = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((d[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((d[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            softmax(&[0.0, f64::NAN]),
            Err(DistributionError::NonFiniteInput { index: 1 })
        ));
    }

    #[test]
    fn entropy_examples() {
        assert!((entropy(&PolicyDistribution::uniform(8)) - 2.079_441_541_679_836).abs() < 1e-12);
        assert_eq!(entropy(&validate_distribution(vec![0.0, 1.0, 0.0]).unwrap()), 0.0);
        let half = validate_distribution(vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        assert!((entropy(&half) - 0.693_147_180_559_945_3).abs() < 1e-12);
    }

    #[test]
    fn sample_one_hot_is_constant() {
        let d = validate_distribution(vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).all(|_| sample_task(&d, &mut rng) == TaskId(2)));
    }

    #[test]
    fn sample_uniform_frequencies() {
        let d = PolicyDistribution::uniform(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0usize; 4];
        let draws = 100_000;
        for _ in 0..draws {
            counts[sample_task(&d, &mut rng).0] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((0.24..=0.26).contains(&f), "frequency {f}");
        }
    }

    #[test]
    fn sample_chi_square_not_rejected() {
        let d = validate_distribution(vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..draws {
            counts[sample_task(&d, &mut rng).0] += 1;
        }
        let chi2: f64 = counts
            .iter()
            .zip(d.probs())
            .map(|(&c, &p)| {
                let e = p * draws as f64;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        // chi-square(3) critical value at alpha = 0.001
        assert!(chi2 < 16.266, "chi2 = {chi2}");
    }

    #[test]
    fn sample_is_deterministic_per_seed() {
        let d = validate_distribution(vec![0.3, 0.3, 0.4]).unwrap();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..500).map(|_| sample_task(&d, &mut rng).0).collect::<Vec<_>>()
        };
        assert_eq!(draw(9), draw(9));
    }

    proptest! {
        #[test]
        fn softmax_is_valid_for_large_logits(omega in prop::collection::vec(-500.0f64..500.0, 1..12)) {
            let d = softmax(&omega).unwrap();
            prop_assert!(validate_distribution(d.into_vec()).is_ok());
        }

        #[test]
        fn softmax_shift_invariant(
            omega in prop::collection::vec(-20.0f64..20.0, 1..10),
            c in -100.0f64..100.0,
        ) {
            let a = softmax(&omega).unwrap();
            let shifted: Vec<f64> = omega.iter().map(|w| w + c).collect();
            let b = softmax(&shifted).unwrap();
            for (p, q) in a.probs().iter().zip(b.probs()) {
                prop_assert!((p - q).abs() < 1e-12);
            }
        }

        #[test]
        fn entropy_bounded_and_max_only_at_equal_logits(omega in prop::collection::vec(-5.0f64..5.0, 2..10)) {
            let n = omega.len() as f64;
            let h = entropy(&softmax(&omega).unwrap());
            prop_assert!(h >= 0.0 && h <= n.ln() + 1e-12);
            let spread = omega.iter().cloned().fold(f64::MIN, f64::max)
                - omega.iter().cloned().fold(f64::MAX, f64::min);
            if spread > 1e-3 {
                prop_assert!(h < n.ln() - 1e-12);
            }
            let equal = vec![omega[0]; omega.len()];
            prop_assert!((entropy(&softmax(&equal).unwrap()) - n.ln()).abs() < 1e-12);
        }
    }
}
