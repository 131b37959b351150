//! Experiment orchestration: configs, runs, ablations, reports and the
//! theory check entry point.

mod ablation;
mod checkpoint;
mod config;
mod experiment;
mod report;

use std::io::Write;
use std::path::Path;

use thiserror::Error;

pub use ablation::{ablation_matrix, median, median_steps, plot_csv, table_csv, AblationTable, ArmRow, PLOT_EMA};
pub use checkpoint::{Block, Checkpoint};
pub use config::{default_threshold, threads_from_env, Arm, InitBias, RunConfig, OUT_DIR_ENV, THREADS_ENV};
pub use experiment::{
    build_trainer, buffer_weights, curve_csv, evaluate_greedy, run_experiment, run_seed, seed_dir, EvalPoint, EvalStats,
    RunSummary, SeedRun,
};
pub use report::{cf_report, repeated_sampling_probe, CfRecord, CfReport, ProbeResult};

use crate::tabular_theory::{theory_check, TheoryCheckSpec, TheoryReport};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("run aborted at iteration {iteration}: {message}")]
    Run { iteration: u64, message: String },
    #[error("evaluation: {0}")]
    Eval(String),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| HarnessError::io(&tmp, e))?;
    f.write_all(bytes).and_then(|_| f.sync_all()).map_err(|e| HarnessError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| HarnessError::io(path, e))
}

pub(crate) fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Runs the tabular suites; the caller decides the exit status from `passed`.
pub fn run_theory_check(spec: &TheoryCheckSpec) -> TheoryReport {
    theory_check(spec)
}

/// Human-readable summary, one line per suite and metric.
pub fn format_theory_report(r: &TheoryReport) -> String {
    let mut s = String::new();
    for suite in &r.suites {
        s.push_str(&format!(
            "{:<22} {} ({} instances)\n",
            suite.name,
            if suite.passed { "PASS" } else { "FAIL" },
            suite.instances
        ));
        for m in &suite.worst {
            s.push_str(&format!("    {:<30} worst {:>12.3e}  bound {:.1e}\n", m.name, m.worst, m.bound));
        }
        if !suite.failing_seeds.is_empty() {
            s.push_str(&format!("    failing seeds: {:?}\n", suite.failing_seeds));
        }
    }
    s.push_str(if r.passed { "theory-check: all suites passed\n" } else { "theory-check: FAILED\n" });
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a/b/c.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert!(!dir.path().join("a/b/c.txt.tmp").exists());
    }
}
