//! Task-selection policies for multitask learning.
//!
//! - [`distribution`]: probability vectors over tasks, softmax, entropy, sampling.
//! - [`rollout`]: logged decisions and the line-delimited log format.
//! - [`policies`]: uniform, task-size, fixed softmax and Exp3.S policies.
//! - [`reward`]: prediction gain, percentile reward scaling, loss-improvement reward.
//! - [`counterfactual`]: IS/WIS estimators and entropy-regularized policy search.
//! - [`cmaes`]: the CMA-ES optimizer behind the policy search.
//! - [`bandit`]: the synthetic multitask bandit environment.
//! - [`harness`]: multi-seed experiments, improvement loops and comparisons.

pub mod bandit;
pub mod cmaes;
pub mod counterfactual;
pub mod distribution;
pub mod harness;
pub mod policies;
pub mod reward;
pub mod rollout;

pub use distribution::{entropy, sample_task, softmax, validate_distribution, PolicyDistribution, TaskId};
pub use rollout::{read_log, write_log, RolloutLog, StepRecord};
