use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::compare::{compare, Comparison};
use super::experiment::{run_experiment, write_experiment, ExperimentResult, ExperimentSpec};
use super::{HarnessError, OutputGuard};
use crate::bandit::{BanditConfig, BanditEnv};
use crate::cmaes::CmaesConfig;
use crate::counterfactual::{improve_policy, Improvement, ImprovementConfig};
use crate::policies::{PolicyDescriptor, DEFAULT_EPSILON, DEFAULT_ETA};
use crate::rollout::{read_log, RolloutLog};

pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [0.1, 0.15, 0.2, 0.25];

/// Seeds for rollouts collected between improvement rounds are offset by
/// this times the round number, so they never reuse evaluation seeds.
const COLLECTION_SEED_STRIDE: u64 = 1000;

fn report_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".report.txt");
    PathBuf::from(name)
}

/// Writes the softmax descriptor to `out` and diagnostics to
/// `<out>.report.txt`.
pub fn write_improvement(improvement: &Improvement, out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| HarnessError::io(parent, e))?;
    }
    let mut guard = OutputGuard::new();
    guard.track(out.to_path_buf());
    PolicyDescriptor::Softmax {
        omega: improvement.omega.clone(),
    }
    .write(out)?;
    let report = report_path(out);
    guard.track(report.clone());
    fs::write(&report, improvement.report()).map_err(|e| HarnessError::io(&report, e))?;
    Ok(guard.commit())
}

fn read_logs(paths: &[PathBuf]) -> Result<Vec<RolloutLog>, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Invalid("no log files given".into()));
    }
    paths.iter().map(|p| read_log(p).map_err(Into::into)).collect()
}

/// Reads logs, runs one round of policy search, and writes the result.
pub fn improve_from_paths(
    paths: &[PathBuf],
    config: &ImprovementConfig,
    out: &Path,
) -> Result<Improvement, HarnessError> {
    let logs = read_logs(paths)?;
    let improvement = improve_policy(&logs, config)?;
    write_improvement(&improvement, out)?;
    Ok(improvement)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridEntry {
    pub lambda: f64,
    pub path: PathBuf,
    pub improvement: Improvement,
}

fn lambda_tag(lambda: f64) -> String {
    format!("{lambda}").replace('.', "p")
}

/// One improvement per entropy weight, plus `grid_summary.txt`.
pub fn lambda_grid(
    logs: &[RolloutLog],
    lambdas: &[f64],
    base: &ImprovementConfig,
    dir: &Path,
) -> Result<Vec<GridEntry>, HarnessError> {
    if lambdas.is_empty() {
        return Err(HarnessError::Invalid("empty lambda grid".into()));
    }
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut guard = OutputGuard::new();
    let mut entries = Vec::with_capacity(lambdas.len());
    for &lambda in lambdas {
        let config = ImprovementConfig {
            lambda,
            ..base.clone()
        };
        let improvement = improve_policy(logs, &config)?;
        let path = dir.join(format!("policy_lambda_{}.json", lambda_tag(lambda)));
        for written in write_improvement(&improvement, &path)? {
            guard.track(written);
        }
        entries.push(GridEntry {
            lambda,
            path,
            improvement,
        });
    }

    let mut summary = format!(
        "{:>8}  {:>12}  {:>12}  {:>10}  {:>10}  {:>10}  policy\n",
        "lambda", "objective", "wis", "entropy", "ess", "min_prob"
    );
    for e in &entries {
        let imp = &e.improvement;
        let min_prob = imp.policy.probs().iter().copied().fold(f64::INFINITY, f64::min);
        let _ = writeln!(
            summary,
            "{:>8}  {:>12.6}  {:>12.6}  {:>10.6}  {:>10.1}  {:>10.6}  {}",
            e.lambda,
            imp.objective,
            imp.wis_value,
            imp.entropy,
            imp.weights.ess,
            min_prob,
            e.path.file_name().unwrap_or_default().to_string_lossy()
        );
    }
    let summary_path = dir.join("grid_summary.txt");
    guard.track(summary_path.clone());
    fs::write(&summary_path, summary).map_err(|e| HarnessError::io(&summary_path, e))?;
    guard.commit();
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImprovementRound {
    pub improvement: Improvement,
    /// Logged steps the search saw.
    pub logged_steps: usize,
    /// Rollouts collected with this round's policy (all rounds but the last).
    pub collected: Option<ExperimentResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IteratedImprovement {
    pub rounds: Vec<ImprovementRound>,
}

impl IteratedImprovement {
    pub fn final_improvement(&self) -> &Improvement {
        &self.rounds.last().expect("at least one round").improvement
    }

    pub fn final_descriptor(&self) -> PolicyDescriptor {
        PolicyDescriptor::Softmax {
            omega: self.final_improvement().omega.clone(),
        }
    }
}

/// `config.iterations` rounds of: search on every log gathered so far, then
/// (except after the last round) roll out the new policy on fresh seeds and
/// add those logs.
pub fn iterated_improvement(
    env: &BanditEnv,
    initial_logs: Vec<RolloutLog>,
    config: &ImprovementConfig,
    seeds: &[u64],
    record_every: u64,
) -> Result<IteratedImprovement, HarnessError> {
    config.validate()?;
    let mut logs = initial_logs;
    let mut rounds = Vec::with_capacity(config.iterations);
    for round in 1..=config.iterations {
        let improvement = improve_policy(&logs, config)?;
        let logged_steps = improvement.logged_steps;
        let collected = if round < config.iterations {
            let mut spec = ExperimentSpec::new(
                env.clone(),
                PolicyDescriptor::Softmax {
                    omega: improvement.omega.clone(),
                },
                seeds
                    .iter()
                    .map(|s| s + COLLECTION_SEED_STRIDE * round as u64)
                    .collect(),
            );
            spec.label = format!("counterfactual_round{round}");
            spec.record_every = record_every;
            let result = run_experiment(&spec)?;
            logs.extend(result.logs());
            Some(result)
        } else {
            None
        };
        rounds.push(ImprovementRound {
            improvement,
            logged_steps,
            collected,
        });
    }
    Ok(IteratedImprovement { rounds })
}

/// Settings for the full bandit comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceConfig {
    pub env: BanditConfig,
    pub seeds: Vec<u64>,
    pub lambda: f64,
    pub improvement_iterations: usize,
    pub cmaes: CmaesConfig,
    pub optimizer_seed: u64,
    pub eta: f64,
    pub epsilon: f64,
    pub record_every: u64,
}

impl Default for ReproduceConfig {
    fn default() -> Self {
        Self {
            env: BanditConfig::default(),
            seeds: (0..10).collect(),
            lambda: 0.2,
            improvement_iterations: 2,
            cmaes: CmaesConfig::new(1),
            optimizer_seed: 0,
            eta: DEFAULT_ETA,
            epsilon: DEFAULT_EPSILON,
            record_every: super::DEFAULT_RECORD_EVERY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproduceOutcome {
    pub env: BanditEnv,
    /// oracle, random, exp3s, counterfactual, in that order.
    pub results: Vec<ExperimentResult>,
    pub improvement: IteratedImprovement,
    pub comparison: Comparison,
}

impl ReproduceOutcome {
    pub fn result(&self, label: &str) -> Option<&ExperimentResult> {
        self.results.iter().find(|r| r.label == label)
    }
}

/// Runs oracle, uniform random and Exp3.S, learns the counterfactual policy
/// from the random runs' logs, runs it, and compares all four. Writes every
/// artifact into `out` when given.
pub fn reproduce_bandit(
    config: &ReproduceConfig,
    out: Option<&Path>,
) -> Result<ReproduceOutcome, HarnessError> {
    let env = BanditEnv::sample(&config.env)?;
    let run = |label: &str, policy: PolicyDescriptor| {
        let mut spec = ExperimentSpec::new(env.clone(), policy, config.seeds.clone());
        spec.label = label.to_string();
        spec.record_every = config.record_every;
        run_experiment(&spec)
    };

    let oracle = run("oracle", PolicyDescriptor::Oracle)?;
    let random = run("random", PolicyDescriptor::Random)?;
    let exp3s = run(
        "exp3s",
        PolicyDescriptor::Exp3s {
            eta: config.eta,
            epsilon: config.epsilon,
        },
    )?;

    let improvement_config = ImprovementConfig {
        lambda: config.lambda,
        cmaes: config.cmaes.clone(),
        iterations: config.improvement_iterations,
        seed: config.optimizer_seed,
    };
    let improvement = iterated_improvement(
        &env,
        random.logs(),
        &improvement_config,
        &config.seeds,
        config.record_every,
    )?;
    let counterfactual = run("counterfactual", improvement.final_descriptor())?;

    let results = vec![oracle, random, exp3s, counterfactual];
    let named: Vec<(String, _)> = results
        .iter()
        .map(|r| (r.label.clone(), r.series.clone()))
        .collect();
    let comparison = compare(&named)?;

    if let Some(dir) = out {
        for result in &results {
            write_experiment(result, &env, dir)?;
        }
        for (i, round) in improvement.rounds.iter().enumerate() {
            let path = dir.join(format!("counterfactual_round{}.policy.json", i + 1));
            write_improvement(&round.improvement, &path)?;
            if let Some(collected) = &round.collected {
                write_experiment(collected, &env, dir)?;
            }
        }
        let table = dir.join("summary.txt");
        fs::write(&table, comparison.table()).map_err(|e| HarnessError::io(&table, e))?;
        let merged = dir.join("merged.csv");
        fs::write(&merged, comparison.merged_csv()).map_err(|e| HarnessError::io(&merged, e))?;
    }

    Ok(ReproduceOutcome {
        env,
        results,
        improvement,
        comparison,
    })
}
