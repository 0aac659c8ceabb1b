//! Task-selection policies behind one interface.
//!
//! Static policies (uniform, task-size proportional, fixed softmax, oracle)
//! return the same distribution at every step. [`Exp3S`] adapts its weights
//! from importance-sampled, scaled rewards and mixes in uniform exploration.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{
    log_sum_exp, softmax, validate_distribution, DistributionError, PolicyDistribution, TaskId,
};

/// Default Exp3.S learning rate.
pub const DEFAULT_ETA: f64 = 1e-3;
/// Default Exp3.S uniform-exploration weight.
pub const DEFAULT_EPSILON: f64 = 0.05;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("a policy needs at least {min} task(s), got {got}")]
    TooFewTasks { min: usize, got: usize },
    #[error("task size at index {index} must be >= 1")]
    NonPositiveSize { index: usize },
    #[error(transparent)]
    Distribution(#[from] DistributionError),
    #[error("invalid Exp3.S hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("scaled reward {0} outside [-1, 1]")]
    RewardOutOfRange(f64),
    #[error("task {task} out of range for {n_tasks} tasks")]
    TaskOutOfRange { task: TaskId, n_tasks: usize },
    #[error("policy has {got} tasks, environment has {expected}")]
    TaskCountMismatch { expected: usize, got: usize },
    #[error("the oracle policy needs the environment's oracle distribution")]
    MissingOracle,
    #[error("policy descriptor {path}: {message}")]
    DescriptorFile { path: String, message: String },
}

/// Behavioral contract shared by every policy.
pub trait TaskPolicy: Send {
    fn n_tasks(&self) -> usize;

    /// The acting distribution at step `t` (1-based).
    fn distribution(&self, t: u64) -> PolicyDistribution;

    /// Feeds back the scaled reward for the task chosen at step `t`.
    /// Static policies ignore it.
    fn observe(&mut self, _t: u64, _task: TaskId, _scaled_reward: f64) -> Result<(), PolicyError> {
        Ok(())
    }

    /// Whether `observe` changes future distributions.
    fn is_adaptive(&self) -> bool {
        false
    }

    /// Human-readable identity and parameters, recorded in log headers.
    fn describe(&self) -> String;
}

/// A policy whose distribution never changes.
#[derive(Debug, Clone)]
pub struct StaticPolicy {
    dist: PolicyDistribution,
    label: String,
}

impl StaticPolicy {
    pub fn new(dist: PolicyDistribution, label: impl Into<String>) -> Self {
        Self {
            dist,
            label: label.into(),
        }
    }
}

impl TaskPolicy for StaticPolicy {
    fn n_tasks(&self) -> usize {
        self.dist.len()
    }

    fn distribution(&self, _t: u64) -> PolicyDistribution {
        self.dist.clone()
    }

    fn describe(&self) -> String {
        self.label.clone()
    }
}

/// Uniform sampling over `n` tasks.
pub fn random_policy(n: usize) -> Result<StaticPolicy, PolicyError> {
    if n < 1 {
        return Err(PolicyError::TooFewTasks { min: 1, got: n });
    }
    Ok(StaticPolicy::new(
        PolicyDistribution::uniform(n),
        format!("random(n={n})"),
    ))
}

/// Sampling proportional to dataset sizes.
pub fn task_size_policy(sizes: &[u64]) -> Result<StaticPolicy, PolicyError> {
    if sizes.is_empty() {
        return Err(PolicyError::TooFewTasks { min: 1, got: 0 });
    }
    if let Some(index) = sizes.iter().position(|&s| s == 0) {
        return Err(PolicyError::NonPositiveSize { index });
    }
    let total: f64 = sizes.iter().map(|&s| s as f64).sum();
    let dist = validate_distribution(sizes.iter().map(|&s| s as f64 / total).collect())?;
    Ok(StaticPolicy::new(dist, format!("task_size(sizes={sizes:?})")))
}

/// A fixed stochastic policy `softmax(omega)`.
pub fn fixed_softmax_policy(omega: &[f64]) -> Result<StaticPolicy, PolicyError> {
    let dist = softmax(omega)?;
    Ok(StaticPolicy::new(dist, format!("softmax(omega={omega:?})")))
}

/// Weights and hyperparameters of Exp3.S.
#[derive(Debug, Clone, PartialEq)]
pub struct Exp3SState {
    pub omega: Vec<f64>,
    pub eta: f64,
    pub epsilon: f64,
    /// Step counter, starting at 1. The update at step `t` uses `α_t = 1/t`.
    pub t: u64,
    pub n_tasks: usize,
}

impl Exp3SState {
    pub fn new(n_tasks: usize, eta: f64, epsilon: f64) -> Result<Self, PolicyError> {
        if n_tasks < 2 {
            return Err(PolicyError::TooFewTasks {
                min: 2,
                got: n_tasks,
            });
        }
        if !(eta.is_finite() && eta > 0.0) {
            return Err(PolicyError::InvalidHyperparameter(format!("eta = {eta}")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(PolicyError::InvalidHyperparameter(format!(
                "epsilon = {epsilon}"
            )));
        }
        Ok(Self {
            omega: vec![0.0; n_tasks],
            eta,
            epsilon,
            t: 1,
            n_tasks,
        })
    }

    /// `ρ = softmax(ω)` before exploration mixing.
    pub fn weights_distribution(&self) -> PolicyDistribution {
        softmax(&self.omega).expect("Exp3.S weights stay finite")
    }

    /// Acting distribution `(1 − ε)·ρ + ε/N`.
    pub fn distribution(&self) -> PolicyDistribution {
        let rho = self.weights_distribution();
        let floor = self.epsilon / self.n_tasks as f64;
        let mixed = rho
            .probs()
            .iter()
            .map(|&r| (1.0 - self.epsilon) * r + floor)
            .collect();
        validate_distribution(mixed).expect("mixture of distributions is a distribution")
    }

    /// One weight update from the scaled reward of the chosen task.
    ///
    /// The importance weight divides by the pre-mixing `ρ_chosen`. The new
    /// weights are evaluated entirely in log space:
    /// `ω'_k = logaddexp(ln(1−α) + a_k, ln(α/(N−1)) + LSE_{j≠k} a_j)` with
    /// `a_j = ω_j + η·r̃_j`.
    pub fn update(&mut self, chosen: TaskId, scaled_reward: f64) -> Result<(), PolicyError> {
        if chosen.0 >= self.n_tasks {
            return Err(PolicyError::TaskOutOfRange {
                task: chosen,
                n_tasks: self.n_tasks,
            });
        }
        if !(-1.0..=1.0).contains(&scaled_reward) {
            return Err(PolicyError::RewardOutOfRange(scaled_reward));
        }
        let rho = self.weights_distribution();
        let mut boosted = self.omega.clone();
        boosted[chosen.0] += self.eta * scaled_reward / rho.prob(chosen);

        let alpha = 1.0 / self.t as f64;
        let log_keep = (1.0 - alpha).ln();
        let log_share = (alpha / (self.n_tasks - 1) as f64).ln();
        let mut others = Vec::with_capacity(self.n_tasks - 1);
        for k in 0..self.n_tasks {
            others.clear();
            others.extend(
                boosted
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != k)
                    .map(|(_, &a)| a),
            );
            let terms = [log_keep + boosted[k], log_share + log_sum_exp(&others)];
            self.omega[k] = log_sum_exp(&terms);
        }
        self.t += 1;
        debug_assert!(self.omega.iter().all(|w| w.is_finite()));
        Ok(())
    }
}

/// Exp3.S as a [`TaskPolicy`].
#[derive(Debug, Clone)]
pub struct Exp3S {
    state: Exp3SState,
}

impl Exp3S {
    pub fn new(n_tasks: usize, eta: f64, epsilon: f64) -> Result<Self, PolicyError> {
        Ok(Self {
            state: Exp3SState::new(n_tasks, eta, epsilon)?,
        })
    }

    pub fn state(&self) -> &Exp3SState {
        &self.state
    }
}

impl TaskPolicy for Exp3S {
    fn n_tasks(&self) -> usize {
        self.state.n_tasks
    }

    fn distribution(&self, _t: u64) -> PolicyDistribution {
        self.state.distribution()
    }

    fn observe(&mut self, _t: u64, task: TaskId, scaled_reward: f64) -> Result<(), PolicyError> {
        self.state.update(task, scaled_reward)
    }

    fn is_adaptive(&self) -> bool {
        true
    }

    fn describe(&self) -> String {
        format!(
            "exp3s(n={}, eta={}, epsilon={})",
            self.state.n_tasks, self.state.eta, self.state.epsilon
        )
    }
}

/// On-disk policy description: `{"type": ..., "params": {...}}`.
///
/// `oracle` resolves to the environment's hidden sampling distribution and
/// is only meaningful inside the bandit harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "snake_case")]
pub enum PolicyDescriptor {
    Random,
    TaskSize { sizes: Vec<u64> },
    Softmax { omega: Vec<f64> },
    Exp3s { eta: f64, epsilon: f64 },
    Oracle,
}

impl PolicyDescriptor {
    /// Parses a built-in policy name: `random`, `exp3s`, or `oracle`.
    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "random" | "uniform" => Some(PolicyDescriptor::Random),
            "exp3s" | "exp3.s" => Some(PolicyDescriptor::Exp3s {
                eta: DEFAULT_ETA,
                epsilon: DEFAULT_EPSILON,
            }),
            "oracle" => Some(PolicyDescriptor::Oracle),
            _ => None,
        }
    }

    /// Short name used for output file stems.
    pub fn kind(&self) -> &'static str {
        match self {
            PolicyDescriptor::Random => "random",
            PolicyDescriptor::TaskSize { .. } => "task_size",
            PolicyDescriptor::Softmax { .. } => "softmax",
            PolicyDescriptor::Exp3s { .. } => "exp3s",
            PolicyDescriptor::Oracle => "oracle",
        }
    }

    /// Instantiates the policy for an `n_tasks`-task problem.
    pub fn build(
        &self,
        n_tasks: usize,
        oracle: Option<&PolicyDistribution>,
    ) -> Result<Box<dyn TaskPolicy>, PolicyError> {
        let policy: Box<dyn TaskPolicy> = match self {
            PolicyDescriptor::Random => Box::new(random_policy(n_tasks)?),
            PolicyDescriptor::TaskSize { sizes } => Box::new(task_size_policy(sizes)?),
            PolicyDescriptor::Softmax { omega } => Box::new(fixed_softmax_policy(omega)?),
            PolicyDescriptor::Exp3s { eta, epsilon } => {
                Box::new(Exp3S::new(n_tasks, *eta, *epsilon)?)
            }
            PolicyDescriptor::Oracle => {
                let dist = oracle.ok_or(PolicyError::MissingOracle)?.clone();
                Box::new(StaticPolicy::new(dist, "oracle"))
            }
        };
        if policy.n_tasks() != n_tasks {
            return Err(PolicyError::TaskCountMismatch {
                expected: n_tasks,
                got: policy.n_tasks(),
            });
        }
        Ok(policy)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("descriptor serializes")
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), PolicyError> {
        let path = path.as_ref();
        let mut text = self.to_json();
        text.push('\n');
        fs::write(path, text).map_err(|e| PolicyError::DescriptorFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        let path = path.as_ref();
        let err = |message: String| PolicyError::DescriptorFile {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| err(e.to_string()))
    }
}

impl fmt::Display for PolicyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyDescriptor::Random => write!(f, "random"),
            PolicyDescriptor::TaskSize { sizes } => write!(f, "task_size(sizes={sizes:?})"),
            PolicyDescriptor::Softmax { omega } => write!(f, "softmax(omega={omega:?})"),
            PolicyDescriptor::Exp3s { eta, epsilon } => {
                write!(f, "exp3s(eta={eta}, epsilon={epsilon})")
            }
            PolicyDescriptor::Oracle => write!(f, "oracle"),
        }
    }
}
