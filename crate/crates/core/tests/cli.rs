use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use taskselect::policies::PolicyDescriptor;
use taskselect::{entropy, read_log, softmax};

fn taskselect(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskselect"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(output: Output) -> String {
    assert!(
        output.status.success(),
        "exit {:?}: {}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    String::from_utf8(output.stdout).unwrap()
}

fn random_logs(dir: &Path) -> String {
    ok(taskselect(&["run", "--policy", "random", "--seeds", "0..4", "--horizon", "1000"], dir));
    format!("{}/random_seed*.jsonl", dir.display())
}

#[test]
fn run_writes_logs_series_and_env() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let stdout = ok(taskselect(
        &["run", "--policy", "exp3s", "--seeds", "3,5", "--horizon", "95", "--label", "bandit"],
        &out,
    ));
    assert!(stdout.starts_with("bandit: median final average score"), "{stdout}");
    for name in ["env.json", "bandit_seed3.jsonl", "bandit_seed5.jsonl", "bandit.series.csv"] {
        assert!(out.join(name).exists(), "missing {name}");
    }
    let series = fs::read_to_string(out.join("bandit.series.csv")).unwrap();
    let lines: Vec<&str> = series.lines().collect();
    assert_eq!(lines[0], "step,median,min,max");
    // every 10th step plus the horizon
    assert_eq!(lines.len(), 1 + 10);
    assert!(lines.last().unwrap().starts_with("95,"));

    let log = read_log(out.join("bandit_seed5.jsonl")).unwrap();
    assert_eq!(log.steps.len(), 95);
    assert!(log.steps.iter().all(|s| s.full_distribution.is_some() && s.loss.is_some()));
}

#[test]
fn env_file_replays_the_same_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(taskselect(&["run", "--env-seed", "4", "--horizon", "200", "--seeds", "1"], &a));
    let env = a.join("env.json");
    ok(taskselect(&["run", "--env", env.to_str().unwrap(), "--seeds", "1"], &b));
    assert_eq!(
        fs::read(a.join("random_seed1.jsonl")).unwrap(),
        fs::read(b.join("random_seed1.jsonl")).unwrap()
    );
}

#[test]
fn improve_learns_a_softened_policy_that_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let pattern = random_logs(&tmp.path().join("logs"));
    let policy = tmp.path().join("learned.json");
    let stdout = ok(taskselect(&["improve", "--logs", &pattern, "--lambda", "0.2"], &policy));
    assert!(stdout.contains("entropy"), "{stdout}");
    assert!(tmp.path().join("learned.json.report.txt").exists());

    let PolicyDescriptor::Softmax { omega } = PolicyDescriptor::read(&policy).unwrap() else {
        panic!("expected a softmax descriptor");
    };
    let probs = softmax(&omega).unwrap();
    let h = entropy(&probs);
    assert!(h > 0.0 && h < (8f64).ln(), "entropy {h}");
    assert!(probs.probs().iter().all(|&p| p >= 1e-4), "{probs:?}");

    let rerun = tmp.path().join("rerun");
    ok(taskselect(
        &["run", "--policy", policy.to_str().unwrap(), "--seeds", "0", "--horizon", "100"],
        &rerun,
    ));
    let log = read_log(rerun.join("softmax_seed0.jsonl")).unwrap();
    // static policies do not log the full distribution
    assert!(log.steps.iter().all(|s| s.full_distribution.is_none()));
    assert!((log.steps[0].propensity - probs.prob(log.steps[0].task)).abs() < 1e-12);
}

#[test]
fn grid_writes_one_policy_per_lambda() {
    let tmp = tempfile::tempdir().unwrap();
    let pattern = random_logs(&tmp.path().join("logs"));
    let grid = tmp.path().join("grid");
    let stdout = ok(taskselect(&["grid", "--logs", &pattern], &grid));
    for tag in ["0p1", "0p15", "0p2", "0p25"] {
        let path = grid.join(format!("policy_lambda_{tag}.json"));
        assert!(PolicyDescriptor::read(&path).is_ok(), "{}", path.display());
    }
    assert!(grid.join("grid_summary.txt").exists());
    assert_eq!(stdout.lines().count(), 5);
}

#[test]
fn compare_tables_and_rejects_mismatched_horizons() {
    let tmp = tempfile::tempdir().unwrap();
    let short = tmp.path().join("short");
    let long = tmp.path().join("long");
    ok(taskselect(&["run", "--policy", "oracle", "--seeds", "0..2", "--horizon", "300"], &short));
    ok(taskselect(&["run", "--policy", "random", "--seeds", "0..2", "--horizon", "300"], &short));
    ok(taskselect(&["run", "--policy", "random", "--seeds", "0", "--horizon", "400"], &long));

    let csv = tmp.path().join("merged.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_taskselect"))
        .args(["compare", "--series"])
        .arg(short.join("random.series.csv"))
        .arg(short.join("oracle.series.csv"))
        .arg("--csv")
        .arg(&csv)
        .output()
        .unwrap();
    let table = ok(output);
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[1].starts_with("oracle"), "{table}");
    assert!(fs::read_to_string(&csv).unwrap().starts_with("step,random_median,"));

    let output = Command::new(env!("CARGO_BIN_EXE_taskselect"))
        .args(["compare", "--series"])
        .arg(short.join("random.series.csv"))
        .arg(long.join("random.series.csv"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("horizon 400"), "{stderr}");
}

#[test]
fn bad_inputs_fail_without_partial_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nothing.json");
    let pattern = format!("{}/none_*.jsonl", tmp.path().display());
    let output = taskselect(&["improve", "--logs", &pattern], &out);
    assert!(!output.status.success());
    assert!(!out.exists());

    let output = taskselect(&["run", "--policy", "greedy", "--seeds", "0"], &tmp.path().join("r"));
    assert!(!output.status.success());
    assert!(String::from_utf8_lossy(&output.stderr).contains("unknown policy"));
}
