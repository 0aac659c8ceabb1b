//! Off-policy value estimates from rollout logs and entropy-regularized
//! policy search.
//!
//! Candidate policies are static, so the importance weight of a logged step
//! is simply `candidate[task] / propensity`. Logs from different logging
//! policies are pooled into one sample set; each step carries its own
//! propensity.

use std::fmt::Write as _;

use thiserror::Error;

use crate::cmaes::{cmaes_optimize, CmaesConfig, CmaesError, Mode, StrategyParameters};
use crate::distribution::{entropy, softmax, DistributionError, PolicyDistribution};
use crate::rollout::RolloutLog;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("no logged steps to estimate from")]
    EmptyLogs,
    #[error("zero or negative propensity {propensity} in log {run_id} at t={t}")]
    ZeroPropensity {
        run_id: String,
        t: u64,
        propensity: f64,
    },
    #[error("importance weights sum to zero; candidate has no support on logged actions")]
    ZeroNormalizer,
    #[error("log {run_id} has {got} tasks, expected {expected}")]
    InconsistentLogs {
        run_id: String,
        expected: usize,
        got: usize,
    },
    #[error("entropy weight must be finite and >= 0, got {0}")]
    InvalidLambda(f64),
    #[error("improvement iterations must be >= 1")]
    InvalidIterations,
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error(transparent)]
    Optimizer(#[from] CmaesError),
}

/// Checks that all logs agree on the task count and returns it.
pub fn common_task_count(logs: &[RolloutLog]) -> Result<usize, EstimatorError> {
    let first = logs.first().ok_or(EstimatorError::EmptyLogs)?;
    for log in logs {
        if log.n_tasks != first.n_tasks {
            return Err(EstimatorError::InconsistentLogs {
                run_id: log.run_id.clone(),
                expected: first.n_tasks,
                got: log.n_tasks,
            });
        }
    }
    Ok(first.n_tasks)
}

/// Logged data paired with the candidate policy it is evaluated against.
#[derive(Debug, Clone, Copy)]
pub struct EstimatorInput<'a> {
    logs: &'a [RolloutLog],
    candidate: &'a PolicyDistribution,
}

impl<'a> EstimatorInput<'a> {
    pub fn new(
        logs: &'a [RolloutLog],
        candidate: &'a PolicyDistribution,
    ) -> Result<Self, EstimatorError> {
        let n_tasks = common_task_count(logs)?;
        if candidate.len() != n_tasks {
            return Err(EstimatorError::InconsistentLogs {
                run_id: "<candidate>".into(),
                expected: n_tasks,
                got: candidate.len(),
            });
        }
        let mut total = 0;
        for log in logs {
            for step in &log.steps {
                if !(step.propensity > 0.0) {
                    return Err(EstimatorError::ZeroPropensity {
                        run_id: log.run_id.clone(),
                        t: step.t,
                        propensity: step.propensity,
                    });
                }
            }
            total += log.steps.len();
        }
        if total == 0 {
            return Err(EstimatorError::EmptyLogs);
        }
        Ok(Self { logs, candidate })
    }

    pub fn candidate(&self) -> &PolicyDistribution {
        self.candidate
    }

    /// `(weight, reward)` for every logged step, logs concatenated in order.
    pub fn weighted_rewards(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.logs.iter().flat_map(move |log| {
            log.steps
                .iter()
                .map(move |s| (self.candidate.prob(s.task) / s.propensity, s.reward))
        })
    }

    pub fn total_steps(&self) -> usize {
        self.logs.iter().map(|l| l.steps.len()).sum()
    }

    /// `(1/T) Σ w_t r_t`.
    pub fn v_hat_is(&self) -> f64 {
        let sum: f64 = self.weighted_rewards().map(|(w, r)| w * r).sum();
        sum / self.total_steps() as f64
    }

    /// `Σ w_t r_t / Σ w_t`, clamped to the logged reward range so rounding
    /// never pushes it outside.
    pub fn v_hat_wis(&self) -> Result<f64, EstimatorError> {
        let (mut num, mut den) = (0.0, 0.0);
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (w, r) in self.weighted_rewards() {
            num += w * r;
            den += w;
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if den == 0.0 {
            return Err(EstimatorError::ZeroNormalizer);
        }
        Ok((num / den).clamp(lo, hi))
    }

    pub fn weight_stats(&self) -> WeightStats {
        WeightStats::from_weights(self.weighted_rewards().map(|(w, _)| w))
    }
}

pub fn v_hat_is(input: &EstimatorInput<'_>) -> f64 {
    input.v_hat_is()
}

pub fn v_hat_wis(input: &EstimatorInput<'_>) -> Result<f64, EstimatorError> {
    input.v_hat_wis()
}

/// Summary of importance weights; `ess = (Σw)² / Σw²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightStats {
    pub count: usize,
    pub sum: f64,
    pub sum_sq: f64,
    pub max: f64,
    pub ess: f64,
}

impl WeightStats {
    pub fn from_weights(weights: impl IntoIterator<Item = f64>) -> Self {
        let (mut count, mut sum, mut sum_sq, mut max) = (0, 0.0, 0.0, 0.0f64);
        for w in weights {
            count += 1;
            sum += w;
            sum_sq += w * w;
            max = max.max(w);
        }
        let ess = if sum_sq > 0.0 { sum * sum / sum_sq } else { 0.0 };
        Self {
            count,
            sum,
            sum_sq,
            max,
            ess,
        }
    }
}

/// `V̂_WIS(softmax(ω)) + λ·H(softmax(ω))`, evaluated step by step.
pub fn regularized_objective(
    logs: &[RolloutLog],
    omega: &[f64],
    lambda: f64,
) -> Result<f64, EstimatorError> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(EstimatorError::InvalidLambda(lambda));
    }
    let candidate = softmax(omega)?;
    let input = EstimatorInput::new(logs, &candidate)?;
    Ok(input.v_hat_wis()? + lambda * entropy(&candidate))
}

/// Per-task sufficient statistics of the logs for static candidates:
/// `Σ r/π` and `Σ 1/π` over the steps that chose each task.
///
/// With these, `Σ_t w_t r_t = Σ_k p_k·A_k`, so one objective evaluation costs
/// O(N) instead of O(steps).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSums {
    reward_over_propensity: Vec<f64>,
    inverse_propensity: Vec<f64>,
    steps: usize,
}

impl TaskSums {
    pub fn from_logs(logs: &[RolloutLog]) -> Result<Self, EstimatorError> {
        let n_tasks = common_task_count(logs)?;
        // validates propensities and emptiness
        let uniform = PolicyDistribution::uniform(n_tasks);
        EstimatorInput::new(logs, &uniform)?;
        let mut sums = Self {
            reward_over_propensity: vec![0.0; n_tasks],
            inverse_propensity: vec![0.0; n_tasks],
            steps: 0,
        };
        for step in logs.iter().flat_map(|l| &l.steps) {
            sums.reward_over_propensity[step.task.0] += step.reward / step.propensity;
            sums.inverse_propensity[step.task.0] += 1.0 / step.propensity;
            sums.steps += 1;
        }
        Ok(sums)
    }

    pub fn v_hat_is(&self, candidate: &PolicyDistribution) -> f64 {
        dot(candidate.probs(), &self.reward_over_propensity) / self.steps as f64
    }

    pub fn v_hat_wis(&self, candidate: &PolicyDistribution) -> Result<f64, EstimatorError> {
        let den = dot(candidate.probs(), &self.inverse_propensity);
        if den == 0.0 {
            return Err(EstimatorError::ZeroNormalizer);
        }
        Ok(dot(candidate.probs(), &self.reward_over_propensity) / den)
    }

    pub fn regularized(&self, omega: &[f64], lambda: f64) -> Result<f64, EstimatorError> {
        let candidate = softmax(omega)?;
        Ok(self.v_hat_wis(&candidate)? + lambda * entropy(&candidate))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Settings for one round of policy search.
#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementConfig {
    /// Entropy weight λ.
    pub lambda: f64,
    /// Population, iteration count and σ0 are used as given; dimension,
    /// mode and seed are set by [`improve_policy`].
    pub cmaes: CmaesConfig,
    /// Number of improve-then-collect rounds run by the harness.
    pub iterations: usize,
    pub seed: u64,
}

impl ImprovementConfig {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            cmaes: CmaesConfig::new(1),
            iterations: 2,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), EstimatorError> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(EstimatorError::InvalidLambda(self.lambda));
        }
        if self.iterations < 1 {
            return Err(EstimatorError::InvalidIterations);
        }
        Ok(())
    }
}

/// Outcome of [`improve_policy`].
#[derive(Debug, Clone, PartialEq)]
pub struct Improvement {
    pub omega: Vec<f64>,
    pub policy: PolicyDistribution,
    pub lambda: f64,
    /// Regularized objective at `omega`.
    pub objective: f64,
    pub wis_value: f64,
    pub is_value: f64,
    pub entropy: f64,
    pub weights: WeightStats,
    /// Best objective of each CMA-ES generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub logged_steps: usize,
    pub strategy: StrategyParameters,
    pub cmaes: CmaesConfig,
}

impl Improvement {
    /// Plain-text diagnostics report.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "lambda = {}", self.lambda);
        let _ = writeln!(out, "objective = {:.12}", self.objective);
        let _ = writeln!(out, "wis_value = {:.12}", self.wis_value);
        let _ = writeln!(out, "is_value = {:.12}", self.is_value);
        let _ = writeln!(
            out,
            "entropy = {:.12} (max {:.12})",
            self.entropy,
            (self.policy.len() as f64).ln()
        );
        let _ = writeln!(out, "policy = {:?}", self.policy.probs());
        let _ = writeln!(out, "omega = {:?}", self.omega);
        let _ = writeln!(out, "logged_steps = {}", self.logged_steps);
        let _ = writeln!(
            out,
            "ess = {:.3} ({:.2}% of steps)",
            self.weights.ess,
            100.0 * self.weights.ess / self.weights.count.max(1) as f64
        );
        let _ = writeln!(out, "max_weight = {:.6}", self.weights.max);
        let _ = writeln!(out, "sum_weight_sq = {:.6}", self.weights.sum_sq);
        let _ = writeln!(
            out,
            "cmaes: population = {}, iterations = {}, sigma0 = {}, seed = {}, evaluations = {}",
            self.cmaes.population,
            self.cmaes.iterations,
            self.cmaes.sigma0,
            self.cmaes.seed,
            self.evaluations
        );
        for line in self.strategy.to_string().lines() {
            let _ = writeln!(out, "cmaes.{line}");
        }
        let history: Vec<String> = self.history.iter().map(|v| format!("{v:.9}")).collect();
        let _ = writeln!(out, "history = [{}]", history.join(", "));
        out
    }
}

/// Searches softmax logits maximizing `V̂_WIS + λ·H` over the pooled logs.
pub fn improve_policy(
    logs: &[RolloutLog],
    config: &ImprovementConfig,
) -> Result<Improvement, EstimatorError> {
    config.validate()?;
    let n_tasks = common_task_count(logs)?;
    let sums = TaskSums::from_logs(logs)?;
    let lambda = config.lambda;

    let cmaes = CmaesConfig {
        dimension: n_tasks,
        mode: Mode::Maximize,
        seed: config.seed,
        ..config.cmaes.clone()
    };
    // The objective is total on finite logits; a failure here is a bug in
    // the sums, surfaced as a non-finite value.
    let result = cmaes_optimize(
        |omega: &[f64]| sums.regularized(omega, lambda).unwrap_or(f64::NAN),
        &cmaes,
    )?;

    let omega = result.best_point;
    let policy = softmax(&omega)?;
    let input = EstimatorInput::new(logs, &policy)?;
    let wis_value = input.v_hat_wis()?;
    let h = entropy(&policy);
    Ok(Improvement {
        objective: wis_value + lambda * h,
        wis_value,
        is_value: input.v_hat_is(),
        entropy: h,
        weights: input.weight_stats(),
        history: result.history,
        evaluations: result.evaluations,
        logged_steps: input.total_steps(),
        strategy: result.strategy,
        cmaes,
        lambda,
        omega,
        policy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{sample_task, validate_distribution, TaskId};
    use crate::rollout::StepRecord;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn log_from(n_tasks: usize, steps: &[(usize, f64, f64)]) -> RolloutLog {
        let mut log = RolloutLog::new("test", 0, n_tasks, steps.len() as u64, "handmade");
        log.steps = steps
            .iter()
            .enumerate()
            .map(|(i, &(task, propensity, reward))| StepRecord {
                t: i as u64 + 1,
                task: TaskId(task),
                propensity,
                reward,
                loss: None,
                full_distribution: None,
            })
            .collect();
        log
    }

    /// Logs drawn from `logging` on a stateless bandit with fixed rewards.
    fn bandit_logs(
        rewards: &[f64],
        logging: &PolicyDistribution,
        n_logs: usize,
        len: usize,
        seed: u64,
    ) -> Vec<RolloutLog> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n_logs)
            .map(|_| {
                let steps: Vec<_> = (0..len)
                    .map(|_| {
                        let k = sample_task(logging, &mut rng).0;
                        (k, logging[k], rewards[k])
                    })
                    .collect();
                log_from(rewards.len(), &steps)
            })
            .collect()
    }

    #[test]
    fn single_step_ratio() {
        let logs = [log_from(2, &[(0, 0.5, 1.0)])];
        let cand = validate_distribution(vec![0.25, 0.75]).unwrap();
        let input = EstimatorInput::new(&logs, &cand).unwrap();
        assert_eq!(input.v_hat_is(), 0.5);
        assert_eq!(input.v_hat_wis().unwrap(), 1.0);
    }

    #[test]
    fn wis_hand_example() {
        // weights 4 and 1 on rewards 1 and 0
        let logs = [log_from(2, &[(0, 0.2, 1.0), (1, 0.2, 0.0)])];
        let cand = validate_distribution(vec![0.8, 0.2]).unwrap();
        let input = EstimatorInput::new(&logs, &cand).unwrap();
        assert!((input.v_hat_wis().unwrap() - 0.8).abs() < 1e-15);
        assert!((input.v_hat_is() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn on_policy_weights_give_mean_reward() {
        let logging = validate_distribution(vec![0.2, 0.5, 0.3]).unwrap();
        let logs = bandit_logs(&[0.9, 0.1, 0.4], &logging, 3, 50, 8);
        let input = EstimatorInput::new(&logs, &logging).unwrap();
        let mean: f64 = logs.iter().flat_map(|l| &l.steps).map(|s| s.reward).sum::<f64>() / 150.0;
        assert!((input.v_hat_is() - mean).abs() < 1e-12);
        assert!((input.v_hat_wis().unwrap() - mean).abs() < 1e-12);
    }

    #[test]
    fn constant_rewards_give_constant_wis() {
        let logging = PolicyDistribution::uniform(4);
        let logs = bandit_logs(&[0.37; 4], &logging, 2, 40, 1);
        let cand = validate_distribution(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let v = EstimatorInput::new(&logs, &cand).unwrap().v_hat_wis().unwrap();
        assert!((v - 0.37).abs() < 1e-12);
    }

    #[test]
    fn error_paths() {
        let cand = PolicyDistribution::uniform(2);
        assert!(matches!(EstimatorInput::new(&[], &cand), Err(EstimatorError::EmptyLogs)));
        let empty = [RolloutLog::new("e", 0, 2, 5, "x")];
        assert!(matches!(EstimatorInput::new(&empty, &cand), Err(EstimatorError::EmptyLogs)));
        let mixed = [log_from(2, &[(0, 0.5, 1.0)]), log_from(3, &[(0, 0.5, 1.0)])];
        assert!(matches!(
            EstimatorInput::new(&mixed, &cand),
            Err(EstimatorError::InconsistentLogs { .. })
        ));
        let zero = [log_from(2, &[(0, 0.0, 1.0)])];
        assert!(matches!(EstimatorInput::new(&zero, &cand), Err(EstimatorError::ZeroPropensity { .. })));
        let logs = [log_from(2, &[(0, 0.5, 1.0)])];
        let off_support = validate_distribution(vec![0.0, 1.0]).unwrap();
        let input = EstimatorInput::new(&logs, &off_support).unwrap();
        assert!(matches!(input.v_hat_wis(), Err(EstimatorError::ZeroNormalizer)));
        assert!(matches!(
            regularized_objective(&logs, &[0.0, 0.0], -1.0),
            Err(EstimatorError::InvalidLambda(_))
        ));
    }

    #[test]
    fn objective_lambda_zero_is_wis() {
        let logs = bandit_logs(&[1.0, 0.2, 0.0], &PolicyDistribution::uniform(3), 2, 30, 4);
        let omega = [0.3, -0.2, 0.1];
        let cand = softmax(&omega).unwrap();
        let wis = EstimatorInput::new(&logs, &cand).unwrap().v_hat_wis().unwrap();
        assert_eq!(regularized_objective(&logs, &omega, 0.0).unwrap(), wis);
    }

    #[test]
    fn task_sums_agree_with_per_step_route() {
        let logging = validate_distribution(vec![0.1, 0.3, 0.6]).unwrap();
        let logs = bandit_logs(&[0.5, 0.25, 0.75], &logging, 4, 100, 12);
        let sums = TaskSums::from_logs(&logs).unwrap();
        let cand = validate_distribution(vec![0.5, 0.2, 0.3]).unwrap();
        let input = EstimatorInput::new(&logs, &cand).unwrap();
        assert!((sums.v_hat_is(&cand) - input.v_hat_is()).abs() < 1e-12);
        assert!((sums.v_hat_wis(&cand).unwrap() - input.v_hat_wis().unwrap()).abs() < 1e-12);
        let omega = [0.4, -1.0, 0.2];
        assert!(
            (sums.regularized(&omega, 0.2).unwrap() - regularized_objective(&logs, &omega, 0.2).unwrap()).abs()
                < 1e-12
        );
    }

    #[test]
    fn is_unbiased_on_enumerable_bandit() {
        let rewards = [1.0, 0.5, 0.0];
        let cand = validate_distribution(vec![0.6, 0.3, 0.1]).unwrap();
        let exact: f64 = cand.probs().iter().zip(rewards).map(|(p, r)| p * r).sum();
        assert!((exact - 0.75).abs() < 1e-15);
        let logs = bandit_logs(&rewards, &PolicyDistribution::uniform(3), 2000, 100, 99);
        let estimates: Vec<f64> = logs
            .chunks(1)
            .map(|l| EstimatorInput::new(l, &cand).unwrap().v_hat_is())
            .collect();
        let n = estimates.len() as f64;
        let mean = estimates.iter().sum::<f64>() / n;
        let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let stderr = (var / n).sqrt();
        assert!((mean - exact).abs() < 3.0 * stderr, "mean {mean}, se {stderr}");
    }

    #[test]
    fn improve_concentrates_on_rewarding_arm() {
        let logs = bandit_logs(&[1.0, 0.0, 0.0, 0.0], &PolicyDistribution::uniform(4), 5, 200, 21);
        let config = ImprovementConfig {
            lambda: 0.0,
            ..ImprovementConfig::new(0.0)
        };
        let out = improve_policy(&logs, &config).unwrap();
        assert!(out.policy[0] > 0.9, "{:?}", out.policy);
        assert_eq!(out.evaluations, 64 * 20);
    }

    #[test]
    fn improve_is_uniform_when_rewards_tie() {
        let logs = bandit_logs(&[0.4; 5], &PolicyDistribution::uniform(5), 5, 200, 2);
        let out = improve_policy(&logs, &ImprovementConfig::new(0.2)).unwrap();
        assert!(out.policy.total_variation(&PolicyDistribution::uniform(5)) < 0.05);
    }

    #[test]
    fn improve_entropy_shrinks_peakedness() {
        let logs = bandit_logs(&[1.0, 0.0, 0.0, 0.0], &PolicyDistribution::uniform(4), 5, 200, 3);
        let median_entropy = |lambda: f64| {
            let mut h: Vec<f64> = (0..5)
                .map(|seed| {
                    let config = ImprovementConfig {
                        seed,
                        ..ImprovementConfig::new(lambda)
                    };
                    improve_policy(&logs, &config).unwrap().entropy
                })
                .collect();
            h.sort_by(f64::total_cmp);
            h[2]
        };
        assert!(median_entropy(0.25) > median_entropy(0.1));
    }

    #[test]
    fn large_lambda_gives_uniform() {
        let logs = bandit_logs(&[1.0, 0.3, 0.0], &PolicyDistribution::uniform(3), 3, 100, 5);
        let out = improve_policy(&logs, &ImprovementConfig::new(1e3)).unwrap();
        assert!(out.policy.total_variation(&PolicyDistribution::uniform(3)) < 0.01);
    }

    #[test]
    fn improve_is_deterministic_and_validates() {
        let logs = bandit_logs(&[0.2, 0.9], &PolicyDistribution::uniform(2), 2, 50, 6);
        let config = ImprovementConfig::new(0.1);
        assert_eq!(improve_policy(&logs, &config).unwrap(), improve_policy(&logs, &config).unwrap());
        let bad = ImprovementConfig { iterations: 0, ..config };
        assert!(matches!(improve_policy(&logs, &bad), Err(EstimatorError::InvalidIterations)));
    }

    proptest! {
        #[test]
        fn wis_scale_invariant_and_bounded(
            seed in 0u64..1000,
            len in 1usize..60,
            exp in -20i32..20,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let steps: Vec<_> = (0..len)
                .map(|_| (rng.random_range(0..3), rng.random_range(0.05..1.0), rng.random_range(-2.0..2.0)))
                .collect();
            let logs = [log_from(3, &steps)];
            let cand = validate_distribution(vec![0.5, 0.3, 0.2]).unwrap();
            let input = EstimatorInput::new(&logs, &cand).unwrap();
            let wis = input.v_hat_wis().unwrap();
            let lo = steps.iter().map(|s| s.2).fold(f64::INFINITY, f64::min);
            let hi = steps.iter().map(|s| s.2).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(wis >= lo && wis <= hi);

            // power-of-two scaling is exact, so the ratio must not move at all
            let scale = 2f64.powi(exp);
            let ratio = |k: f64| {
                let (num, den) = input
                    .weighted_rewards()
                    .fold((0.0, 0.0), |(n, d), (w, r)| (n + k * w * r, d + k * w));
                num / den
            };
            prop_assert_eq!(ratio(scale), ratio(1.0));
            prop_assert!((ratio(1.0) - wis).abs() <= 1e-12 * wis.abs().max(1.0));
        }
    }
}
