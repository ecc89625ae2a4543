//! Experiment results as CSV plus a plain-text summary.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A measured quantity compared against a bound (`measured <= bound` unless
/// `at_least` is set).
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    pub at_least: bool,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            bound,
            at_least: false,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        Check {
            name: name.into(),
            measured,
            bound,
            at_least: true,
        }
    }

    pub fn passed(&self) -> bool {
        if self.at_least {
            self.measured >= self.bound
        } else {
            self.measured <= self.bound
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentReport {
    pub name: String,
    /// Every parameter and seed the numbers depend on.
    pub config: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    pub seconds: f64,
}

impl ExperimentReport {
    pub fn new(name: &str) -> Self {
        ExperimentReport {
            name: name.to_string(),
            ..Default::default()
        }
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.to_string(), value.to_string()));
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn to_csv(&self) -> String {
        let mut s = self.columns.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "experiment: {}", self.name);
        let _ = writeln!(s, "seconds: {:.3}", self.seconds);
        let _ = writeln!(s, "[config]");
        for (k, v) in &self.config {
            let _ = writeln!(s, "{k} = {v}");
        }
        if !self.checks.is_empty() {
            let _ = writeln!(s, "[checks]");
            for c in &self.checks {
                let op = if c.at_least { ">=" } else { "<=" };
                let verdict = if c.passed() { "PASS" } else { "FAIL" };
                let _ = writeln!(s, "{verdict} {}: {:e} {op} {:e}", c.name, c.measured, c.bound);
            }
        }
        if !self.notes.is_empty() {
            let _ = writeln!(s, "[notes]");
            for n in &self.notes {
                let _ = writeln!(s, "{n}");
            }
        }
        s
    }

    /// Writes `<name>.csv` and `<name>_summary.txt` into `dir`; returns both paths.
    pub fn write(&self, dir: &Path) -> Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join(format!("{}.csv", self.name));
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let txt = dir.join(format!("{}_summary.txt", self.name));
        fs::write(&txt, self.summary()).map_err(|e| Error::io(&txt, e))?;
        Ok((csv, txt))
    }
}

/// Mean and population standard deviation.
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let num = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_lists_config_and_verdicts() {
        let mut r = ExperimentReport::new("demo");
        r.set("seed", 7);
        r.columns = vec!["a".into(), "b".into()];
        r.rows.push(vec!["1".into(), "2".into()]);
        r.checks.push(Check::at_most("dev", 1e-12, 1e-9));
        r.checks.push(Check::at_least("acc", 0.5, 0.9));
        let s = r.summary();
        assert!(s.contains("seed = 7"));
        assert!(s.contains("PASS dev"));
        assert!(s.contains("FAIL acc"));
        assert!(!r.all_passed());
        assert_eq!(r.to_csv(), "a,b\n1,2\n");
        let dir = tempfile::tempdir().unwrap();
        let (csv, txt) = r.write(dir.path()).unwrap();
        assert!(csv.exists() && txt.exists());
    }

    #[test]
    fn deviation_and_moments() {
        assert_eq!(relative_deviation(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert_eq!(relative_deviation(&[1.0, 2.5], &[1.0, 2.0]), 0.25);
        assert_eq!(mean_std(&[1.0, 3.0]), (2.0, 1.0));
    }
}
