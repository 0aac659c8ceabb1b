//! Reward signals: prediction gain, percentile reward scaling, and the
//! loss-improvement reward used for counterfactual logs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::distribution::TaskId;

/// Default reservoir capacity.
pub const DEFAULT_RESERVOIR_CAPACITY: usize = 1000;

pub const LOWER_PERCENTILE: f64 = 0.2;
pub const UPPER_PERCENTILE: f64 = 0.8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewardError {
    #[error("non-finite input: {0}")]
    NonFinite(f64),
    #[error("loss must be >= 0, got {0}")]
    NegativeLoss(f64),
    #[error("reservoir is empty")]
    EmptyReservoir,
    #[error("reservoir capacity must be >= 1")]
    ZeroCapacity,
    #[error("task {task} out of range for {n_tasks} tasks")]
    TaskOutOfRange { task: TaskId, n_tasks: usize },
}

/// Decrease in loss across one training update; positive means progress.
pub fn prediction_gain(loss_before: f64, loss_after: f64) -> Result<f64, RewardError> {
    for v in [loss_before, loss_after] {
        if !v.is_finite() {
            return Err(RewardError::NonFinite(v));
        }
    }
    Ok(loss_before - loss_after)
}

/// Linear-interpolation percentile at rank `p·(n−1)` of a sorted slice.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Maps raw rewards into `[-1, 1]` using the 20th/80th percentiles of a
/// reservoir sample of the reward history.
#[derive(Debug, Clone)]
pub struct RewardScaler {
    reservoir: Vec<f64>,
    capacity: usize,
    seen_count: u64,
    rng: ChaCha8Rng,
}

impl RewardScaler {
    pub fn new(capacity: usize, seed: u64) -> Result<Self, RewardError> {
        Self::with_rng(capacity, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(capacity: usize, rng: ChaCha8Rng) -> Result<Self, RewardError> {
        if capacity == 0 {
            return Err(RewardError::ZeroCapacity);
        }
        Ok(Self {
            reservoir: Vec::with_capacity(capacity),
            capacity,
            seen_count: 0,
            rng,
        })
    }

    pub fn reservoir(&self) -> &[f64] {
        &self.reservoir
    }

    pub fn seen_count(&self) -> u64 {
        self.seen_count
    }

    /// Algorithm R: fill, then keep the new value with probability
    /// `capacity / seen_count`, evicting a uniform slot.
    pub fn observe(&mut self, raw: f64) -> Result<(), RewardError> {
        if !raw.is_finite() {
            return Err(RewardError::NonFinite(raw));
        }
        self.seen_count += 1;
        if self.reservoir.len() < self.capacity {
            self.reservoir.push(raw);
        } else {
            let slot = self.rng.random_range(0..self.seen_count);
            if (slot as usize) < self.capacity {
                self.reservoir[slot as usize] = raw;
            }
        }
        Ok(())
    }

    /// `(q20, q80)` of the current reservoir.
    pub fn quantiles(&self) -> Result<(f64, f64), RewardError> {
        if self.reservoir.is_empty() {
            return Err(RewardError::EmptyReservoir);
        }
        let mut sorted = self.reservoir.clone();
        sorted.sort_by(f64::total_cmp);
        Ok((
            percentile_sorted(&sorted, LOWER_PERCENTILE),
            percentile_sorted(&sorted, UPPER_PERCENTILE),
        ))
    }

    pub fn scale(&self, raw: f64) -> Result<f64, RewardError> {
        if !raw.is_finite() {
            return Err(RewardError::NonFinite(raw));
        }
        let (q20, q80) = self.quantiles()?;
        Ok(scale_between(raw, q20, q80))
    }
}

/// Piecewise map: `-1` below `q20`, `+1` above `q80`, affine in between.
/// A collapsed band (`q20 == q80`) maps to `0` inside it.
pub fn scale_between(raw: f64, q20: f64, q80: f64) -> f64 {
    if raw < q20 {
        -1.0
    } else if raw > q80 {
        1.0
    } else if q80 == q20 {
        0.0
    } else {
        (2.0 * (raw - q20) / (q80 - q20) - 1.0).clamp(-1.0, 1.0)
    }
}

/// Loss observed the last time each task was sampled.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskLossHistory {
    last_loss: Vec<Option<f64>>,
}

impl TaskLossHistory {
    pub fn new(n_tasks: usize) -> Self {
        Self {
            last_loss: vec![None; n_tasks],
        }
    }

    pub fn last_loss(&self, task: TaskId) -> Option<f64> {
        self.last_loss.get(task.0).copied().flatten()
    }

    /// Reward for the current sample of `task`, recording `current_loss`.
    ///
    /// `1 − e^{−L}` when the loss strictly dropped since the task was last
    /// sampled, otherwise `0`. A first visit earns `0`.
    pub fn counterfactual_reward(
        &mut self,
        task: TaskId,
        current_loss: f64,
    ) -> Result<f64, RewardError> {
        if !current_loss.is_finite() {
            return Err(RewardError::NonFinite(current_loss));
        }
        if current_loss < 0.0 {
            return Err(RewardError::NegativeLoss(current_loss));
        }
        let n_tasks = self.last_loss.len();
        let slot = self
            .last_loss
            .get_mut(task.0)
            .ok_or(RewardError::TaskOutOfRange { task, n_tasks })?;
        let reward = match slot.replace(current_loss) {
            Some(previous) if current_loss - previous < 0.0 => 1.0 - (-current_loss).exp(),
            _ => 0.0,
        };
        Ok(reward)
    }
}
