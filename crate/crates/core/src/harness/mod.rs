//! Batch experiments on the synthetic bandit: multi-seed runs, counterfactual
//! improvement from logs, and side-by-side comparison of score series.

mod compare;
mod experiment;
mod improve;
mod series;

use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use compare::{compare, compare_files, read_series_file, ComparisonRow, Comparison};
pub use experiment::{
    run_experiment, run_seed, write_experiment, ExperimentResult, ExperimentSpec, SeedRun,
    DEFAULT_RECORD_EVERY,
};
pub use improve::{
    improve_from_paths, iterated_improvement, lambda_grid, reproduce_bandit, write_improvement,
    GridEntry, ImprovementRound, IteratedImprovement, ReproduceConfig, ReproduceOutcome,
    DEFAULT_LAMBDA_GRID,
};
pub use series::{AggregateSeries, SeriesError};

use crate::bandit::BanditError;
use crate::counterfactual::EstimatorError;
use crate::policies::PolicyError;
use crate::reward::RewardError;
use crate::rollout::LogError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Bandit(#[from] BanditError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Series(#[from] SeriesError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("invalid experiment: {0}")]
    Invalid(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        HarnessError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Parses `a..b` (inclusive), `a..=b`, or a comma list such as `1,4,9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, HarnessError> {
    let bad = || HarnessError::Invalid(format!("cannot parse seeds from {text:?}"));
    let text = text.trim();
    let seeds: Vec<u64> = if let Some((lo, hi)) = text.split_once("..") {
        let hi = hi.strip_prefix('=').unwrap_or(hi);
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        if hi < lo {
            return Err(bad());
        }
        (lo..=hi).collect()
    } else {
        text.split(',')
            .map(|s| s.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?
    };
    Ok(seeds)
}

/// Files written so far; deleted on drop unless [`OutputGuard::commit`] ran.
pub(crate) struct OutputGuard {
    paths: Vec<PathBuf>,
    committed: bool,
}

impl OutputGuard {
    pub(crate) fn new() -> Self {
        Self {
            paths: Vec::new(),
            committed: false,
        }
    }

    pub(crate) fn track(&mut self, path: PathBuf) {
        self.paths.push(path);
    }

    pub(crate) fn commit(mut self) -> Vec<PathBuf> {
        self.committed = true;
        std::mem::take(&mut self.paths)
    }
}

impl Drop for OutputGuard {
    fn drop(&mut self) {
        if !self.committed {
            for path in &self.paths {
                let _ = std::fs::remove_file(path);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_syntax() {
        assert_eq!(parse_seeds("0..9").unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("5, 1,7").unwrap(), vec![5, 1, 7]);
        assert!(parse_seeds("9..2").is_err());
        assert!(parse_seeds("a,b").is_err());
    }
}
