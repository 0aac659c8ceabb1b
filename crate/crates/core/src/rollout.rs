//! Logged decisions and the line-delimited rollout-log format.
//!
//! A log file is UTF-8 text with one JSON object per line. The first line is
//! the header:
//!
//! ```text
//! {"format_version":1,"run_id":"random_seed0","seed":0,"n_tasks":8,"horizon":5000,"policy_descriptor":"random(n=8)"}
//! ```
//!
//! and every following line is one step:
//!
//! ```text
//! {"t":1,"task":3,"propensity":0.125,"reward":0.0,"loss":5.52,"dist":[...]}
//! ```
//!
//! `loss` and `dist` may be absent. Floats are written in shortest
//! round-trip form, so `read_log(write_log(log)) == log` bit for bit.

use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::distribution::{PolicyDistribution, TaskId};

pub const FORMAT_VERSION: u32 = 1;

/// Tolerance on `dist[task] == propensity`.
const PROPENSITY_MATCH_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invariant violation{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    InvariantViolation { line: Option<usize>, message: String },
}

impl LogError {
    fn invariant(line: Option<usize>, message: impl Into<String>) -> Self {
        LogError::InvariantViolation {
            line,
            message: message.into(),
        }
    }
}

/// One logged decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: u64,
    pub task: TaskId,
    /// Probability the logging policy gave `task` at step `t`.
    pub propensity: f64,
    pub reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss: Option<f64>,
    #[serde(
        rename = "dist",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub full_distribution: Option<PolicyDistribution>,
}

impl StepRecord {
    fn check(&self, n_tasks: usize) -> Result<(), String> {
        if self.t < 1 {
            return Err(format!("step t must be >= 1, got {}", self.t));
        }
        if self.task.0 >= n_tasks {
            return Err(format!("task {} out of range for {n_tasks} tasks", self.task));
        }
        if !(self.propensity > 0.0 && self.propensity <= 1.0) {
            return Err(format!(
                "propensity must lie in (0, 1], got {} at t={}",
                self.propensity, self.t
            ));
        }
        if !self.reward.is_finite() {
            return Err(format!("non-finite reward at t={}", self.t));
        }
        if let Some(loss) = self.loss {
            if !(loss.is_finite() && loss >= 0.0) {
                return Err(format!("loss must be finite and >= 0, got {loss} at t={}", self.t));
            }
        }
        if let Some(dist) = &self.full_distribution {
            if dist.len() != n_tasks {
                return Err(format!(
                    "dist has {} entries, expected {n_tasks} at t={}",
                    dist.len(),
                    self.t
                ));
            }
            if (dist.prob(self.task) - self.propensity).abs() > PROPENSITY_MATCH_TOLERANCE {
                return Err(format!(
                    "dist[{}] = {} disagrees with propensity {} at t={}",
                    self.task,
                    dist.prob(self.task),
                    self.propensity,
                    self.t
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    run_id: String,
    seed: u64,
    n_tasks: usize,
    horizon: u64,
    policy_descriptor: String,
}

/// An ordered run of logged decisions from one logging policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutLog {
    pub run_id: String,
    pub seed: u64,
    pub n_tasks: usize,
    pub horizon: u64,
    pub policy_descriptor: String,
    pub steps: Vec<StepRecord>,
}

impl RolloutLog {
    pub fn new(
        run_id: impl Into<String>,
        seed: u64,
        n_tasks: usize,
        horizon: u64,
        policy_descriptor: impl Into<String>,
    ) -> Self {
        Self {
            run_id: run_id.into(),
            seed,
            n_tasks,
            horizon,
            policy_descriptor: policy_descriptor.into(),
            steps: Vec::new(),
        }
    }

    /// Checks every log-level and step-level invariant.
    pub fn validate(&self) -> Result<(), LogError> {
        if self.n_tasks == 0 {
            return Err(LogError::invariant(None, "n_tasks must be >= 1"));
        }
        if self.steps.len() as u64 > self.horizon {
            return Err(LogError::invariant(
                None,
                format!("{} steps exceed horizon {}", self.steps.len(), self.horizon),
            ));
        }
        let mut prev_t = 0;
        for (i, step) in self.steps.iter().enumerate() {
            // header is line 1
            let line = Some(i + 2);
            step.check(self.n_tasks)
                .map_err(|m| LogError::invariant(line, m))?;
            if step.t <= prev_t {
                return Err(LogError::invariant(
                    line,
                    format!("t={} does not increase past {prev_t}", step.t),
                ));
            }
            prev_t = step.t;
        }
        Ok(())
    }

    fn header(&self) -> Header {
        Header {
            format_version: FORMAT_VERSION,
            run_id: self.run_id.clone(),
            seed: self.seed,
            n_tasks: self.n_tasks,
            horizon: self.horizon,
            policy_descriptor: self.policy_descriptor.clone(),
        }
    }

    /// Serializes the log to a string in the line-delimited format.
    pub fn to_text(&self) -> Result<String, LogError> {
        self.validate()?;
        let mut out = String::new();
        push_json_line(&mut out, &self.header());
        for step in &self.steps {
            push_json_line(&mut out, step);
        }
        Ok(out)
    }

    /// Parses and validates a log from its text form.
    pub fn from_reader<R: BufRead>(reader: R) -> Result<Self, LogError> {
        let mut lines = reader.lines().enumerate();
        let header: Header = match lines.next() {
            Some((_, line)) => {
                let line = line.map_err(|e| LogError::Parse {
                    line: 1,
                    message: e.to_string(),
                })?;
                serde_json::from_str(&line).map_err(|e| LogError::Parse {
                    line: 1,
                    message: e.to_string(),
                })?
            }
            None => {
                return Err(LogError::Parse {
                    line: 1,
                    message: "missing header line".into(),
                })
            }
        };
        if header.format_version != FORMAT_VERSION {
            return Err(LogError::Parse {
                line: 1,
                message: format!("unsupported format_version {}", header.format_version),
            });
        }
        let mut log = RolloutLog {
            run_id: header.run_id,
            seed: header.seed,
            n_tasks: header.n_tasks,
            horizon: header.horizon,
            policy_descriptor: header.policy_descriptor,
            steps: Vec::new(),
        };
        for (i, line) in lines {
            let line_no = i + 1;
            let line = line.map_err(|e| LogError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let step: StepRecord = serde_json::from_str(&line).map_err(|e| LogError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            log.steps.push(step);
        }
        log.validate()?;
        Ok(log)
    }
}

fn push_json_line<T: Serialize>(out: &mut String, value: &T) {
    // Serializing plain structs of numbers and strings cannot fail.
    out.push_str(&serde_json::to_string(value).expect("serializable record"));
    out.push('\n');
}

/// Writes `log` to `path`, replacing any existing file.
pub fn write_log(log: &RolloutLog, path: impl AsRef<Path>) -> Result<(), LogError> {
    let path = path.as_ref();
    let text = log.to_text()?;
    let io_err = |source| LogError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    let mut writer = BufWriter::new(file);
    writer.write_all(text.as_bytes()).map_err(io_err)?;
    writer.flush().map_err(io_err)
}

/// Reads and validates a log written by [`write_log`].
pub fn read_log(path: impl AsRef<Path>) -> Result<RolloutLog, LogError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|source| LogError::Io {
        path: path.display().to_string(),
        source,
    })?;
    RolloutLog::from_reader(BufReader::new(file))
}
