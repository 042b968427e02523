//! Metrics reports and their wall-clock sidecars.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dreamdiff::{Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::artifacts::{read_json, write_json};
use crate::config::{config_hash, schedule_hash, sha256_hex, ExperimentConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Deterministic outcome of one evaluation suite.
///
/// Wall-clock timings live in a separate [`Timings`] file so that re-running a
/// config reproduces the report byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub suite: String,
    pub config_hash: String,
    pub schedule_hash: String,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub trials: BTreeMap<String, Value>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub run_id: String,
    pub seconds: BTreeMap<String, f64>,
}

pub fn timings_path(report: &Path) -> PathBuf {
    report.with_extension("timings.json")
}

pub fn run_id(config_hash: &str, suite: &str) -> String {
    sha256_hex(format!("{config_hash}/{suite}").as_bytes())[..16].to_string()
}

/// Accumulates metrics, checks, trial records and timings for one suite.
#[derive(Debug, Clone, Default)]
pub struct SuiteOutcome {
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub trials: BTreeMap<String, Value>,
    pub seconds: BTreeMap<String, f64>,
}

impl SuiteOutcome {
    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn check(&mut self, name: &str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        });
    }

    pub fn trial<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.trials.insert(name.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn timed<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let start = std::time::Instant::now();
        let out = f()?;
        *self.seconds.entry(name.to_string()).or_default() += start.elapsed().as_secs_f64();
        Ok(out)
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn merge(&mut self, other: SuiteOutcome) {
        self.metrics.extend(other.metrics);
        self.checks.extend(other.checks);
        self.trials.extend(other.trials);
        for (k, v) in other.seconds {
            *self.seconds.entry(k).or_default() += v;
        }
    }

    pub fn into_report(self, cfg: &ExperimentConfig, suite: &str) -> Result<(MetricsReport, Timings)> {
        let chash = config_hash(cfg)?;
        let id = run_id(&chash, suite);
        let passed = self.passed();
        let report = MetricsReport {
            run_id: id.clone(),
            suite: suite.to_string(),
            config_hash: chash,
            schedule_hash: schedule_hash(cfg)?,
            metrics: self.metrics,
            checks: self.checks,
            trials: self.trials,
            passed,
        };
        Ok((report, Timings { run_id: id, seconds: self.seconds }))
    }
}

pub fn write_report(path: &Path, report: &MetricsReport, timings: &Timings) -> Result<()> {
    write_json(path, report)?;
    write_json(&timings_path(path), timings)
}

/// Loads reports for side-by-side comparison; all must share one schedule hash.
pub fn load_comparable(paths: &[PathBuf]) -> Result<Vec<MetricsReport>> {
    let reports: Vec<MetricsReport> = paths.iter().map(|p| read_json(p)).collect::<Result<_>>()?;
    if let Some(first) = reports.first() {
        for (r, p) in reports.iter().zip(paths).skip(1) {
            if r.schedule_hash != first.schedule_hash {
                return Err(Error::Validation(vec![format!(
                    "{}: schedule hash {} differs from {} in {}",
                    p.display(),
                    r.schedule_hash,
                    first.schedule_hash,
                    paths[0].display()
                )]));
            }
        }
    }
    Ok(reports)
}

/// Metric table with one column per report.
pub fn render_table(reports: &[MetricsReport]) -> String {
    let mut names: Vec<&String> = reports.iter().flat_map(|r| r.metrics.keys()).collect();
    names.sort();
    names.dedup();
    let mut out = String::from("metric");
    for r in reports {
        out.push_str(&format!("\t{}:{}", r.suite, r.run_id));
    }
    out.push('\n');
    for name in names {
        out.push_str(name);
        for r in reports {
            match r.metrics.get(name) {
                Some(v) => out.push_str(&format!("\t{v:.6}")),
                None => out.push_str("\t-"),
            }
        }
        out.push('\n');
    }
    out.push_str("passed");
    for r in reports {
        out.push_str(&format!("\t{}", r.passed));
    }
    out.push('\n');
    out
}
