use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use taskselect::bandit::{BanditConfig, BanditEnv};
use taskselect::cmaes::CmaesConfig;
use taskselect::counterfactual::ImprovementConfig;
use taskselect::harness::{
    compare_files, improve_from_paths, lambda_grid, parse_seeds, reproduce_bandit, run_experiment,
    write_experiment, ExperimentSpec, ReproduceConfig, DEFAULT_RECORD_EVERY,
};
use taskselect::policies::PolicyDescriptor;
use taskselect::read_log;

#[derive(Parser)]
#[command(name = "taskselect", version, about = "Task-selection policies on a synthetic multitask bandit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy over several seeds; writes logs, a score series and env.json.
    Run(RunArgs),
    /// Learn a softmax policy from rollout logs.
    Improve(ImproveArgs),
    /// Learn one policy per entropy weight.
    Grid(GridArgs),
    /// Tabulate and merge score series files.
    Compare(CompareArgs),
    /// Full bandit comparison: oracle, random, Exp3.S and the counterfactual policy.
    Reproduce(ReproduceArgs),
}

#[derive(Args)]
struct EnvArgs {
    /// Environment descriptor file (replaces the flags below).
    #[arg(long, conflicts_with_all = ["env_seed", "n_arms", "alpha_mtl", "horizon"])]
    env: Option<PathBuf>,
    #[arg(long)]
    env_seed: Option<u64>,
    #[arg(long)]
    n_arms: Option<usize>,
    #[arg(long)]
    alpha_mtl: Option<f64>,
    #[arg(long)]
    horizon: Option<u64>,
}

impl EnvArgs {
    fn config(&self) -> BanditConfig {
        let d = BanditConfig::default();
        BanditConfig {
            env_seed: self.env_seed.unwrap_or(d.env_seed),
            n_arms: self.n_arms.unwrap_or(d.n_arms),
            alpha_mtl: self.alpha_mtl.unwrap_or(d.alpha_mtl),
            horizon: self.horizon.unwrap_or(d.horizon),
            ..d
        }
    }

    fn load(&self) -> Result<BanditEnv> {
        match &self.env {
            Some(path) => BanditEnv::read(path).context("loading environment"),
            None => Ok(BanditEnv::sample(&self.config())?),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    env: EnvArgs,
    /// Policy name (random, exp3s, oracle) or descriptor file.
    #[arg(long, default_value = "random")]
    policy: String,
    /// Seeds as `a..b` (inclusive) or a comma list.
    #[arg(long, default_value = "0..9")]
    seeds: String,
    #[arg(long, default_value_t = DEFAULT_RECORD_EVERY)]
    record_every: u64,
    /// Output file stem; defaults to the policy kind.
    #[arg(long)]
    label: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CmaArgs {
    #[arg(long, default_value_t = CmaesConfig::DEFAULT_ITERATIONS)]
    cma_iters: usize,
    #[arg(long, default_value_t = CmaesConfig::DEFAULT_POPULATION)]
    cma_pop: usize,
    #[arg(long, default_value_t = CmaesConfig::DEFAULT_SIGMA0)]
    sigma0: f64,
    /// Optimizer seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl CmaArgs {
    fn improvement(&self, lambda: f64) -> ImprovementConfig {
        ImprovementConfig {
            lambda,
            cmaes: CmaesConfig {
                iterations: self.cma_iters,
                population: self.cma_pop,
                sigma0: self.sigma0,
                ..CmaesConfig::new(1)
            },
            iterations: 1,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct ImproveArgs {
    /// Log files or glob patterns.
    #[arg(long, required = true, num_args = 1..)]
    logs: Vec<String>,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    #[command(flatten)]
    cma: CmaArgs,
    /// Output policy descriptor; diagnostics go to `<out>.report.txt`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GridArgs {
    #[arg(long, required = true, num_args = 1..)]
    logs: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.15, 0.2, 0.25])]
    lambdas: Vec<f64>,
    #[command(flatten)]
    cma: CmaArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long, required = true, num_args = 1..)]
    series: Vec<PathBuf>,
    /// Write the table here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Merged per-step CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[arg(long, default_value_t = 0)]
    env_seed: u64,
    #[arg(long, default_value_t = 5000)]
    horizon: u64,
    #[arg(long, default_value = "0..9")]
    seeds: String,
    #[arg(long, default_value_t = 0.2)]
    lambda: f64,
    /// Improve-then-collect rounds.
    #[arg(long, default_value_t = 2)]
    iterations: usize,
    #[command(flatten)]
    cma: CmaArgs,
    #[arg(long, default_value_t = DEFAULT_RECORD_EVERY)]
    record_every: u64,
    #[arg(long)]
    out: PathBuf,
}

fn resolve_policy(text: &str) -> Result<PolicyDescriptor> {
    if let Some(d) = PolicyDescriptor::from_name(text) {
        return Ok(d);
    }
    let path = Path::new(text);
    if path.exists() {
        return Ok(PolicyDescriptor::read(path)?);
    }
    bail!("unknown policy {text:?}: expected random, exp3s, oracle, or a descriptor file")
}

fn expand_logs(patterns: &[String]) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for pattern in patterns {
        let before = paths.len();
        for entry in glob::glob(pattern).with_context(|| format!("bad glob {pattern:?}"))? {
            paths.push(entry?);
        }
        if paths.len() == before {
            bail!("no log files match {pattern:?}");
        }
    }
    Ok(paths)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let env = args.env.load()?;
    let policy = resolve_policy(&args.policy)?;
    let mut spec = ExperimentSpec::new(env.clone(), policy, parse_seeds(&args.seeds)?);
    spec.record_every = args.record_every;
    if let Some(label) = args.label {
        spec.label = label;
    }
    let result = run_experiment(&spec)?;
    let written = write_experiment(&result, &env, &args.out)?;
    println!(
        "{}: median final average score {:.6} over {} seeds ({} files in {})",
        result.label,
        result.median_final(),
        spec.seeds.len(),
        written.len(),
        args.out.display()
    );
    Ok(())
}

fn cmd_improve(args: ImproveArgs) -> Result<()> {
    let paths = expand_logs(&args.logs)?;
    let improvement = improve_from_paths(&paths, &args.cma.improvement(args.lambda), &args.out)?;
    print!("{}", improvement.report());
    Ok(())
}

fn cmd_grid(args: GridArgs) -> Result<()> {
    let paths = expand_logs(&args.logs)?;
    let logs = paths
        .iter()
        .map(|p| read_log(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let entries = lambda_grid(&logs, &args.lambdas, &args.cma.improvement(0.0), &args.out)?;
    print!("{}", fs::read_to_string(args.out.join("grid_summary.txt"))?);
    eprintln!("{} policies written to {}", entries.len(), args.out.display());
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let comparison = compare_files(&args.series)?;
    let table = comparison.table();
    print!("{table}");
    if let Some(out) = args.out {
        fs::write(&out, &table).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(csv) = args.csv {
        fs::write(&csv, comparison.merged_csv()).with_context(|| format!("writing {}", csv.display()))?;
    }
    Ok(())
}

fn cmd_reproduce(args: ReproduceArgs) -> Result<()> {
    let improvement = args.cma.improvement(args.lambda);
    let config = ReproduceConfig {
        env: BanditConfig {
            env_seed: args.env_seed,
            horizon: args.horizon,
            ..BanditConfig::default()
        },
        seeds: parse_seeds(&args.seeds)?,
        lambda: args.lambda,
        improvement_iterations: args.iterations,
        cmaes: improvement.cmaes,
        optimizer_seed: args.cma.seed,
        record_every: args.record_every,
        ..ReproduceConfig::default()
    };
    let outcome = reproduce_bandit(&config, Some(&args.out))?;
    print!("{}", outcome.comparison.table());
    let learned = outcome.improvement.final_improvement();
    println!("learned policy: {:?}", learned.policy.probs());
    println!("oracle:         {:?}", outcome.env.oracle.probs());
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(a) => cmd_run(a),
        Command::Improve(a) => cmd_improve(a),
        Command::Grid(a) => cmd_grid(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Reproduce(a) => cmd_reproduce(a),
    }
}
