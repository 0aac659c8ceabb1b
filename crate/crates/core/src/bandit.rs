//! Synthetic multitask bandit.
//!
//! Each arm is a task with a score in `[0, MaxP_k]`. Pulling arm `k` adds its
//! learning increment `LI_k = MaxP_k / (T·oracle_k)`; every arm, pulled or
//! not, then loses its forget increment `FI_k` each step. A hidden oracle
//! distribution drawn from a symmetric Dirichlet sets the increments, so
//! sampling arms in oracle proportions brings every arm to its ceiling at
//! the horizon.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{validate_distribution, PolicyDistribution, TaskId};

/// Oracle entries below this are redrawn.
pub const MIN_ORACLE_PROB: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum BanditError {
    #[error("invalid bandit config: {0}")]
    InvalidConfig(String),
    #[error("step {t} would exceed horizon {horizon}")]
    HorizonExceeded { t: u64, horizon: u64 },
    #[error("arm {arm} out of range for {n_arms} arms")]
    ArmOutOfRange { arm: TaskId, n_arms: usize },
    #[error("score {0} outside [0, 1]")]
    ScoreOutOfRange(f64),
    #[error("environment file {path}: {message}")]
    EnvFile { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    pub n_arms: usize,
    pub horizon: u64,
    pub alpha_mtl: f64,
    pub maxp_range: (f64, f64),
    pub fi_mult_range: (f64, f64),
    pub loss_floor: f64,
    pub env_seed: u64,
}

impl Default for BanditConfig {
    fn default() -> Self {
        Self {
            n_arms: 8,
            horizon: 5000,
            alpha_mtl: 2.0,
            maxp_range: (0.5, 1.0),
            fi_mult_range: (0.0, 0.01),
            loss_floor: 1e-6,
            env_seed: 0,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self) -> Result<(), BanditError> {
        let fail = |m: String| Err(BanditError::InvalidConfig(m));
        if self.n_arms < 1 {
            return fail("n_arms must be >= 1".into());
        }
        if self.horizon < 1 {
            return fail("horizon must be >= 1".into());
        }
        if !(self.alpha_mtl.is_finite() && self.alpha_mtl > 0.0) {
            return fail(format!("alpha_mtl must be > 0, got {}", self.alpha_mtl));
        }
        let (lo, hi) = self.maxp_range;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return fail(format!("maxp_range must satisfy 0 < lo <= hi <= 1, got [{lo}, {hi}]"));
        }
        let (lo, hi) = self.fi_mult_range;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return fail(format!("fi_mult_range must lie within [0, 1], got [{lo}, {hi}]"));
        }
        if !(self.loss_floor > 0.0 && self.loss_floor <= 1.0) {
            return fail(format!("loss_floor must lie in (0, 1], got {}", self.loss_floor));
        }
        Ok(())
    }
}

/// The realized, seed-determined constants of one environment.
///
/// Serialized as the environment descriptor file, so a run can be replayed
/// without re-drawing anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditEnv {
    pub config: BanditConfig,
    pub oracle: PolicyDistribution,
    pub maxp: Vec<f64>,
    pub li: Vec<f64>,
    pub fi: Vec<f64>,
    /// How many oracle draws were rejected by the [`MIN_ORACLE_PROB`] guard.
    #[serde(default)]
    pub oracle_resamples: u32,
}

impl BanditEnv {
    /// Draws oracle, ceilings and forget increments from `config.env_seed`.
    pub fn sample(config: &BanditConfig) -> Result<Self, BanditError> {
        config.validate()?;
        let n = config.n_arms;
        let mut rng = ChaCha8Rng::seed_from_u64(config.env_seed);
        let gamma = Gamma::new(config.alpha_mtl, 1.0)
            .map_err(|e| BanditError::InvalidConfig(e.to_string()))?;

        let mut oracle_resamples = 0;
        let oracle = loop {
            let draws: Vec<f64> = (0..n).map(|_| gamma.sample(&mut rng)).collect();
            let total: f64 = draws.iter().sum();
            let probs: Vec<f64> = draws.iter().map(|g| g / total).collect();
            if total > 0.0 && probs.iter().all(|&p| p >= MIN_ORACLE_PROB) {
                break validate_distribution(probs)
                    .map_err(|e| BanditError::InvalidConfig(e.to_string()))?;
            }
            oracle_resamples += 1;
        };

        let maxp: Vec<f64> = (0..n)
            .map(|_| uniform(&mut rng, config.maxp_range))
            .collect();
        let fi_mult: Vec<f64> = (0..n)
            .map(|_| uniform(&mut rng, config.fi_mult_range))
            .collect();
        let horizon = config.horizon as f64;
        let li: Vec<f64> = maxp
            .iter()
            .zip(oracle.probs())
            .map(|(m, p)| m / (horizon * p))
            .collect();
        let fi = fi_mult.iter().zip(&li).map(|(u, l)| u * l).collect();

        Ok(Self {
            config: config.clone(),
            oracle,
            maxp,
            li,
            fi,
            oracle_resamples,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.config.n_arms
    }

    pub fn horizon(&self) -> u64 {
        self.config.horizon
    }

    /// Checks the realized vectors against the config (used on load).
    pub fn validate(&self) -> Result<(), BanditError> {
        self.config.validate()?;
        let n = self.config.n_arms;
        let fail = |m: String| Err(BanditError::InvalidConfig(m));
        if self.oracle.len() != n || self.maxp.len() != n || self.li.len() != n || self.fi.len() != n {
            return fail(format!("environment vectors must all have {n} entries"));
        }
        for k in 0..n {
            if !(self.oracle[k] > 0.0) {
                return fail(format!("oracle[{k}] must be > 0"));
            }
            if !(self.maxp[k] > 0.0 && self.maxp[k] <= 1.0) {
                return fail(format!("maxp[{k}] = {} outside (0, 1]", self.maxp[k]));
            }
            if !(self.li[k].is_finite() && self.li[k] > 0.0) {
                return fail(format!("li[{k}] = {} must be finite and > 0", self.li[k]));
            }
            if !(self.fi[k].is_finite() && self.fi[k] >= 0.0) {
                return fail(format!("fi[{k}] = {} must be finite and >= 0", self.fi[k]));
            }
        }
        Ok(())
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), BanditError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("environment serializes");
        text.push('\n');
        fs::write(path, text).map_err(|e| BanditError::EnvFile {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, BanditError> {
        let path = path.as_ref();
        let err = |message: String| BanditError::EnvFile {
            path: path.display().to_string(),
            message,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let env: BanditEnv = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        env.validate()?;
        Ok(env)
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Scores before and after one step, for the pulled arm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub before: f64,
    pub after: f64,
}

/// Mutable per-run state over a shared environment.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditState {
    env: BanditEnv,
    scores: Vec<f64>,
    t: u64,
}

impl BanditState {
    pub fn new(env: BanditEnv) -> Self {
        let n = env.n_arms();
        Self {
            env,
            scores: vec![0.0; n],
            t: 0,
        }
    }

    pub fn env(&self) -> &BanditEnv {
        &self.env
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Steps taken so far.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Pulls `chosen`: add `LI` (capped at `MaxP`), then subtract `FI` from
    /// every arm (floored at 0).
    pub fn step(&mut self, chosen: TaskId) -> Result<StepOutcome, BanditError> {
        let n_arms = self.env.n_arms();
        if chosen.0 >= n_arms {
            return Err(BanditError::ArmOutOfRange { arm: chosen, n_arms });
        }
        if self.t >= self.env.horizon() {
            return Err(BanditError::HorizonExceeded {
                t: self.t + 1,
                horizon: self.env.horizon(),
            });
        }
        let k = chosen.0;
        let before = self.scores[k];
        self.scores[k] = (self.scores[k] + self.env.li[k]).min(self.env.maxp[k]);
        for (score, fi) in self.scores.iter_mut().zip(&self.env.fi) {
            *score = (*score - fi).max(0.0);
        }
        self.t += 1;
        Ok(StepOutcome {
            before,
            after: self.scores[k],
        })
    }

    pub fn average_score(&self) -> f64 {
        average_score(&self.scores)
    }

    /// Loss of arm `k` under the current score.
    pub fn loss(&self, arm: TaskId) -> f64 {
        bandit_loss(self.scores[arm.0], self.env.config.loss_floor)
            .expect("scores stay within [0, 1]")
    }
}

pub fn bandit_init(config: &BanditConfig) -> Result<BanditState, BanditError> {
    Ok(BanditState::new(BanditEnv::sample(config)?))
}

/// Negative log-likelihood reading of a score: `−ln(max(score, floor))`.
pub fn bandit_loss(score: f64, floor: f64) -> Result<f64, BanditError> {
    if !(0.0..=1.0).contains(&score) {
        return Err(BanditError::ScoreOutOfRange(score));
    }
    Ok(-score.max(floor).ln())
}

pub fn average_score(scores: &[f64]) -> f64 {
    scores.iter().sum::<f64>() / scores.len() as f64
}
