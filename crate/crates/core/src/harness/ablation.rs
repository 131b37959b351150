use std::fmt::Write as _;

use serde::Serialize;

use super::experiment::{run_seed, seed_dir, summary_rows, SeedRun, SUMMARY_HEADER};
use super::{fmt_opt, write_atomic, Arm, HarnessError, RunConfig};
use crate::par;

/// Smoothing constant for the plot export only.
pub const PLOT_EMA: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmRow {
    pub arm: Arm,
    pub seeds: usize,
    pub reached: usize,
    /// `None` when the median seed never reached the threshold.
    pub median_steps_to_threshold: Option<f64>,
    pub steps_to_threshold: Vec<Option<u64>>,
    pub median_final_success: f64,
    pub min_final_success: f64,
    pub max_final_success: f64,
    pub median_final_invalid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub env: String,
    pub threshold: f64,
    pub rows: Vec<ArmRow>,
    pub runs: Vec<SeedRun>,
}

impl AblationTable {
    pub fn row(&self, arm: Arm) -> Option<&ArmRow> {
        self.rows.iter().find(|r| r.arm == arm)
    }

    pub fn runs_for(&self, arm: Arm) -> impl Iterator<Item = &SeedRun> {
        self.runs.iter().filter(move |r| r.arm == arm)
    }
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        return f64::NAN;
    }
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

/// Median where a missing value counts as larger than any reached one.
pub fn median_steps(xs: &[Option<u64>]) -> Option<f64> {
    let v: Vec<f64> = xs.iter().map(|x| x.map_or(f64::INFINITY, |s| s as f64)).collect();
    Some(median(&v)).filter(|m| m.is_finite())
}

fn arm_row(arm: Arm, runs: &[&SeedRun]) -> ArmRow {
    let steps: Vec<Option<u64>> = runs.iter().map(|r| r.steps_to_threshold).collect();
    let finals: Vec<f64> = runs.iter().map(|r| r.final_success).collect();
    let invalid: Vec<f64> = runs.iter().map(|r| r.final_invalid_rate).collect();
    ArmRow {
        arm,
        seeds: runs.len(),
        reached: steps.iter().filter(|s| s.is_some()).count(),
        median_steps_to_threshold: median_steps(&steps),
        steps_to_threshold: steps,
        median_final_success: median(&finals),
        min_final_success: finals.iter().copied().fold(f64::INFINITY, f64::min),
        max_final_success: finals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        median_final_invalid_rate: median(&invalid),
    }
}

/// Runs every (arm, seed) pair of `cfg.arms x cfg.seeds` in parallel and
/// writes per-arm summaries, the comparison table and plot data.
pub fn ablation_matrix(cfg: &RunConfig) -> Result<AblationTable, HarnessError> {
    cfg.validate()?;
    if cfg.arms.len() < 2 {
        return Err(HarnessError::Config("an ablation needs at least two arms".into()));
    }
    let jobs: Vec<(Arm, u64)> = cfg.arms.iter().flat_map(|a| cfg.seeds.iter().map(move |s| (*a, *s))).collect();
    let runs: Vec<SeedRun> = par::map_slice(&jobs, |&(arm, seed)| {
        let arm_cfg = cfg.for_arm(arm);
        let dir = seed_dir(&arm_cfg, seed);
        run_seed(&arm_cfg, seed, Some(dir.as_path())).map(|(r, _)| r)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let rows: Vec<ArmRow> = cfg
        .arms
        .iter()
        .map(|a| arm_row(*a, &runs.iter().filter(|r| r.arm == *a).collect::<Vec<_>>()))
        .collect();
    let table = AblationTable { env: cfg.env.clone(), threshold: cfg.threshold(), rows, runs };
    let root = cfg.output_dir.join(&cfg.name);
    for arm in &cfg.arms {
        let these: Vec<SeedRun> = table.runs_for(*arm).cloned().collect();
        let body = format!("{SUMMARY_HEADER}{}", summary_rows(&these));
        write_atomic(&root.join(arm.name()).join("summary.csv"), body.as_bytes())?;
    }
    write_atomic(&root.join("ablation.csv"), table_csv(&table).as_bytes())?;
    write_atomic(&root.join("plot_success.csv"), plot_csv(&table).as_bytes())?;
    Ok(table)
}

pub fn table_csv(t: &AblationTable) -> String {
    let mut s = String::from(
        "env,arm,seeds,reached_threshold,median_steps_to_threshold,median_final_success,min_final_success,max_final_success,median_final_invalid_rate\n",
    );
    for r in &t.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            t.env,
            r.arm.name(),
            r.seeds,
            r.reached,
            fmt_opt(r.median_steps_to_threshold),
            r.median_final_success,
            r.min_final_success,
            r.max_final_success,
            r.median_final_invalid_rate
        );
    }
    s
}

/// One series per arm: median eval success across seeds at each logged step,
/// raw and exponentially smoothed.
pub fn plot_csv(t: &AblationTable) -> String {
    let mut s = format!("# ema_alpha={PLOT_EMA}\narm,env_steps,success_median,success_smoothed\n");
    for row in &t.rows {
        let runs: Vec<&SeedRun> = t.runs_for(row.arm).collect();
        let len = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
        let mut ema: Option<f64> = None;
        for i in 0..len {
            let ys: Vec<f64> = runs.iter().map(|r| r.curve[i].success_rate).collect();
            let y = median(&ys);
            let e = ema.map_or(y, |prev| PLOT_EMA * y + (1.0 - PLOT_EMA) * prev);
            ema = Some(e);
            let _ = writeln!(s, "{},{},{},{}", row.arm.name(), runs[0].curve[i].env_steps, y, e);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(median_steps(&[Some(5), None, Some(1)]), Some(5.0));
        assert_eq!(median_steps(&[Some(5), None, None]), None);
        assert_eq!(median_steps(&[Some(2), Some(4), None, Some(6)]), Some(5.0));
    }
}
