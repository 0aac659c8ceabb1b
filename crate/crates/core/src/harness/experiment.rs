use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::series::AggregateSeries;
use super::{HarnessError, OutputGuard};
use crate::bandit::{BanditEnv, BanditState};
use crate::distribution::sample_task;
use crate::policies::PolicyDescriptor;
use crate::reward::{prediction_gain, RewardScaler, TaskLossHistory, DEFAULT_RESERVOIR_CAPACITY};
use crate::rollout::{write_log, RolloutLog, StepRecord};

pub const DEFAULT_RECORD_EVERY: u64 = 10;

/// RNG stream for task sampling.
const SAMPLING_STREAM: u64 = 0;
/// RNG stream for the reward scaler's reservoir.
const RESERVOIR_STREAM: u64 = 1;

/// One policy on one environment over a set of run seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub env: BanditEnv,
    pub policy: PolicyDescriptor,
    /// Output file stem; defaults to the policy kind.
    pub label: String,
    pub seeds: Vec<u64>,
    pub record_every: u64,
}

impl ExperimentSpec {
    pub fn new(env: BanditEnv, policy: PolicyDescriptor, seeds: Vec<u64>) -> Self {
        Self {
            label: policy.kind().to_string(),
            env,
            policy,
            seeds,
            record_every: DEFAULT_RECORD_EVERY,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.env.validate()?;
        if self.seeds.is_empty() {
            return Err(HarnessError::Invalid("at least one seed is required".into()));
        }
        let distinct: BTreeSet<_> = self.seeds.iter().collect();
        if distinct.len() != self.seeds.len() {
            return Err(HarnessError::Invalid("seeds must be distinct".into()));
        }
        if self.record_every < 1 {
            return Err(HarnessError::Invalid("record_every must be >= 1".into()));
        }
        if self.label.is_empty() || self.label.contains(['/', '\\']) {
            return Err(HarnessError::Invalid(format!("bad label {:?}", self.label)));
        }
        Ok(())
    }

    /// Steps at which the average score is recorded: every `record_every`
    /// steps plus the final step.
    pub fn recorded_steps(&self) -> Vec<u64> {
        let horizon = self.env.horizon();
        (1..=horizon)
            .filter(|t| t % self.record_every == 0 || *t == horizon)
            .collect()
    }
}

/// Output of a single seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedRun {
    pub seed: u64,
    pub log: RolloutLog,
    /// Average score at each recorded step.
    pub scores: Vec<f64>,
    pub final_scores: Vec<f64>,
}

impl SeedRun {
    pub fn final_average(&self) -> f64 {
        *self.scores.last().expect("horizon >= 1")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub label: String,
    pub runs: Vec<SeedRun>,
    pub series: AggregateSeries,
}

impl ExperimentResult {
    pub fn logs(&self) -> Vec<RolloutLog> {
        self.runs.iter().map(|r| r.log.clone()).collect()
    }

    pub fn final_averages(&self) -> Vec<f64> {
        self.runs.iter().map(SeedRun::final_average).collect()
    }

    pub fn median_final(&self) -> f64 {
        super::series::median(&self.final_averages())
    }
}

/// Runs one seed of the environment loop.
///
/// Each step: draw the acting distribution, sample a task, step the
/// environment, log the loss-improvement reward, and (for adaptive
/// policies) feed back the scaled prediction gain.
pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedRun, HarnessError> {
    let env = &spec.env;
    let n = env.n_arms();
    let horizon = env.horizon();
    let mut policy = spec.policy.build(n, Some(&env.oracle))?;
    let adaptive = policy.is_adaptive();

    let mut sampler = ChaCha8Rng::seed_from_u64(seed);
    sampler.set_stream(SAMPLING_STREAM);
    let mut reservoir_rng = ChaCha8Rng::seed_from_u64(seed);
    reservoir_rng.set_stream(RESERVOIR_STREAM);
    let mut scaler = RewardScaler::with_rng(DEFAULT_RESERVOIR_CAPACITY, reservoir_rng)?;
    let mut history = TaskLossHistory::new(n);
    let mut state = BanditState::new(env.clone());

    let mut log = RolloutLog::new(
        format!("{}_seed{seed}", spec.label),
        seed,
        n,
        horizon,
        policy.describe(),
    );
    log.steps.reserve(horizon as usize);
    let mut scores = Vec::new();

    for t in 1..=horizon {
        let dist = policy.distribution(t);
        let task = sample_task(&dist, &mut sampler);
        let loss_before = state.loss(task);
        state.step(task)?;
        let loss_after = state.loss(task);
        let reward = history.counterfactual_reward(task, loss_after)?;

        if adaptive {
            let gain = prediction_gain(loss_before, loss_after)?;
            scaler.observe(gain)?;
            policy.observe(t, task, scaler.scale(gain)?)?;
        }

        log.steps.push(StepRecord {
            t,
            task,
            propensity: dist.prob(task),
            reward,
            loss: Some(loss_after),
            full_distribution: adaptive.then_some(dist),
        });
        if t % spec.record_every == 0 || t == horizon {
            scores.push(state.average_score());
        }
    }

    Ok(SeedRun {
        seed,
        log,
        scores,
        final_scores: state.scores().to_vec(),
    })
}

/// Runs every seed (in parallel) and aggregates the score series.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, HarnessError> {
    spec.validate()?;
    let runs: Vec<SeedRun> = spec
        .seeds
        .par_iter()
        .map(|&seed| run_seed(spec, seed))
        .collect::<Result<_, _>>()?;
    let per_seed: Vec<Vec<f64>> = runs.iter().map(|r| r.scores.clone()).collect();
    let series = AggregateSeries::from_seeds(spec.recorded_steps(), &per_seed)?;
    Ok(ExperimentResult {
        label: spec.label.clone(),
        runs,
        series,
    })
}

/// Writes `<label>_seed<k>.jsonl` per seed, `<label>.series.csv`, and the
/// environment descriptor `env.json` into `dir`. On failure nothing written
/// by this call is left behind.
pub fn write_experiment(
    result: &ExperimentResult,
    env: &BanditEnv,
    dir: &Path,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut guard = OutputGuard::new();

    let env_path = dir.join("env.json");
    guard.track(env_path.clone());
    env.write(&env_path)?;

    for run in &result.runs {
        let path = dir.join(format!("{}_seed{}.jsonl", result.label, run.seed));
        guard.track(path.clone());
        write_log(&run.log, &path)?;
    }
    let series_path = dir.join(format!("{}.series.csv", result.label));
    guard.track(series_path.clone());
    fs::write(&series_path, result.series.to_csv()).map_err(|e| HarnessError::io(&series_path, e))?;
    Ok(guard.commit())
}
