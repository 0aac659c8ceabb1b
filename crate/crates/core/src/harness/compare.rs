use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::series::AggregateSeries;
use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub policy: String,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Final-score table plus the merged per-step series.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    /// Sorted by median final score, best first.
    pub rows: Vec<ComparisonRow>,
    pub steps: Vec<u64>,
    /// In input order.
    pub series: Vec<(String, AggregateSeries)>,
}

impl Comparison {
    pub fn row(&self, policy: &str) -> Option<&ComparisonRow> {
        self.rows.iter().find(|r| r.policy == policy)
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.policy.len())
            .max()
            .unwrap_or(0)
            .max("policy".len());
        let mut out = format!(
            "{:<width$}  {:>12}  {:>12}  {:>12}\n",
            "policy", "median_final", "min_final", "max_final"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>12.6}  {:>12.6}  {:>12.6}",
                r.policy, r.median, r.min, r.max
            );
        }
        out
    }

    /// `step,<p>_median,<p>_min,<p>_max,...` with one column group per series.
    pub fn merged_csv(&self) -> String {
        let mut out = String::from("step");
        for (name, _) in &self.series {
            let _ = write!(out, ",{name}_median,{name}_min,{name}_max");
        }
        out.push('\n');
        for (i, step) in self.steps.iter().enumerate() {
            let _ = write!(out, "{step}");
            for (_, s) in &self.series {
                let _ = write!(out, ",{},{},{}", s.median[i], s.min[i], s.max[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// Builds the comparison; every series must share the same recorded steps.
pub fn compare(named: &[(String, AggregateSeries)]) -> Result<Comparison, HarnessError> {
    let (_, first) = named
        .first()
        .ok_or_else(|| HarnessError::Invalid("compare needs at least one series".into()))?;
    if let Some((name, _)) = named.iter().find(|(_, s)| s.is_empty()) {
        return Err(HarnessError::Invalid(format!("series {name} has no rows")));
    }
    let offending: Vec<String> = named
        .iter()
        .filter(|(_, s)| s.steps != first.steps)
        .map(|(n, s)| format!("{n} (horizon {})", s.steps.last().copied().unwrap_or(0)))
        .collect();
    if !offending.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "mismatched horizons: {} disagree with {} (horizon {})",
            offending.join(", "),
            named[0].0,
            first.steps.last().copied().unwrap_or(0)
        )));
    }

    let mut rows: Vec<ComparisonRow> = named
        .iter()
        .map(|(name, s)| {
            let (_, median, min, max) = s.last().expect("non-empty series");
            ComparisonRow {
                policy: name.clone(),
                median,
                min,
                max,
            }
        })
        .collect();
    rows.sort_by(|a, b| b.median.total_cmp(&a.median));
    Ok(Comparison {
        rows,
        steps: first.steps.clone(),
        series: named.to_vec(),
    })
}

/// Series name from a file path: the file name without `.series.csv`
/// (or without its extension).
fn series_name(path: &Path) -> String {
    let file = path
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    file.strip_suffix(".series.csv")
        .map(str::to_string)
        .unwrap_or_else(|| {
            path.file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or(file)
        })
}

pub fn read_series_file(path: &Path) -> Result<(String, AggregateSeries), HarnessError> {
    Ok((series_name(path), AggregateSeries::read(path)?))
}

pub fn compare_files(paths: &[PathBuf]) -> Result<Comparison, HarnessError> {
    let named: Vec<_> = paths
        .iter()
        .map(|p| read_series_file(p))
        .collect::<Result<_, _>>()?;
    compare(&named)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(steps: Vec<u64>, finals: f64) -> AggregateSeries {
        let n = steps.len();
        let mut values = vec![0.0; n];
        values[n - 1] = finals;
        AggregateSeries::from_seeds(steps, &[values]).unwrap()
    }

    #[test]
    fn single_series_identity() {
        let s = series(vec![10, 20], 0.42);
        let c = compare(&[("a".into(), s.clone())]).unwrap();
        assert_eq!(c.rows.len(), 1);
        assert_eq!(c.rows[0].median, 0.42);
        assert_eq!(c.series[0].1, s);
    }

    #[test]
    fn rows_sorted_by_median_final() {
        let c = compare(&[
            ("low".into(), series(vec![10, 20], 0.1)),
            ("high".into(), series(vec![10, 20], 0.9)),
        ])
        .unwrap();
        assert_eq!(c.rows[0].policy, "high");
        assert_eq!(c.rows[1].policy, "low");
        assert!(c.table().lines().nth(1).unwrap().starts_with("high"));
        assert!(c.merged_csv().starts_with("step,low_median,low_min,low_max,high_median"));
    }

    #[test]
    fn mismatched_horizons_name_the_file() {
        let err = compare(&[
            ("a".into(), series(vec![10, 20], 0.1)),
            ("b".into(), series(vec![10, 20, 30], 0.2)),
        ])
        .unwrap_err();
        let text = err.to_string();
        assert!(text.contains("b (horizon 30)"), "{text}");
    }

    #[test]
    fn names_from_paths() {
        assert_eq!(series_name(Path::new("out/exp3s.series.csv")), "exp3s");
        assert_eq!(series_name(Path::new("x/other.csv")), "other");
    }
}
