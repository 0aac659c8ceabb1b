//! Per-step score statistics across seeds, stored as `step,median,min,max`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

pub const SERIES_HEADER: &str = "step,median,min,max";

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("series needs at least one seed")]
    NoSeeds,
    #[error("seed series have mismatched lengths")]
    RaggedSeeds,
    #[error("series {path}: {message}")]
    Parse { path: String, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateSeries {
    pub steps: Vec<u64>,
    pub median: Vec<f64>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl AggregateSeries {
    /// Pointwise median, min and max over per-seed series sampled at `steps`.
    pub fn from_seeds(steps: Vec<u64>, per_seed: &[Vec<f64>]) -> Result<Self, SeriesError> {
        if per_seed.is_empty() {
            return Err(SeriesError::NoSeeds);
        }
        if per_seed.iter().any(|s| s.len() != steps.len()) {
            return Err(SeriesError::RaggedSeeds);
        }
        let mut out = Self {
            median: Vec::with_capacity(steps.len()),
            min: Vec::with_capacity(steps.len()),
            max: Vec::with_capacity(steps.len()),
            steps,
        };
        let mut column = Vec::with_capacity(per_seed.len());
        for i in 0..out.steps.len() {
            column.clear();
            column.extend(per_seed.iter().map(|s| s[i]));
            column.sort_by(f64::total_cmp);
            out.median.push(median_sorted(&column));
            out.min.push(column[0]);
            out.max.push(column[column.len() - 1]);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `(step, median, min, max)` of the final recorded point.
    pub fn last(&self) -> Option<(u64, f64, f64, f64)> {
        let i = self.steps.len().checked_sub(1)?;
        Some((self.steps[i], self.median[i], self.min[i], self.max[i]))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(SERIES_HEADER);
        out.push('\n');
        for i in 0..self.steps.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.steps[i], self.median[i], self.min[i], self.max[i]
            );
        }
        out
    }

    pub fn from_csv(text: &str, path: &str) -> Result<Self, SeriesError> {
        let err = |message: String| SeriesError::Parse {
            path: path.to_string(),
            message,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim() == SERIES_HEADER => {}
            other => return Err(err(format!("expected header {SERIES_HEADER:?}, got {other:?}"))),
        }
        let mut series = Self {
            steps: Vec::new(),
            median: Vec::new(),
            min: Vec::new(),
            max: Vec::new(),
        };
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(err(format!("line {}: expected 4 fields", i + 2)));
            }
            let num = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| err(format!("line {}: {e}", i + 2)))
            };
            series.steps.push(
                fields[0]
                    .trim()
                    .parse()
                    .map_err(|e| err(format!("line {}: {e}", i + 2)))?,
            );
            series.median.push(num(fields[1])?);
            series.min.push(num(fields[2])?);
            series.max.push(num(fields[3])?);
        }
        Ok(series)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, SeriesError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| SeriesError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

pub(crate) fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    median_sorted(&sorted)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregates_pointwise() {
        let s = AggregateSeries::from_seeds(
            vec![10, 20],
            &[vec![0.1, 0.5], vec![0.3, 0.2], vec![0.2, 0.9], vec![0.4, 0.1]],
        )
        .unwrap();
        assert_eq!(s.min, vec![0.1, 0.1]);
        assert_eq!(s.max, vec![0.4, 0.9]);
        assert!((s.median[0] - 0.25).abs() < 1e-15);
        assert!((s.median[1] - 0.35).abs() < 1e-15);
        assert_eq!(s.last(), Some((20, s.median[1], 0.1, 0.9)));
    }

    #[test]
    fn csv_round_trip() {
        let s = AggregateSeries::from_seeds(vec![5], &[vec![1.0 / 3.0]]).unwrap();
        let text = s.to_csv();
        assert!(text.starts_with("step,median,min,max\n"));
        assert_eq!(AggregateSeries::from_csv(&text, "mem").unwrap(), s);
        assert!(AggregateSeries::from_csv("a,b\n", "mem").is_err());
    }

    #[test]
    fn rejects_bad_input() {
        assert!(AggregateSeries::from_seeds(vec![1], &[]).is_err());
        assert!(AggregateSeries::from_seeds(vec![1, 2], &[vec![0.0]]).is_err());
    }
}
