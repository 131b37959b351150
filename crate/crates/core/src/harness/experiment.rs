use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::{checkpoint::Checkpoint, fmt_opt, write_atomic, Arm, HarnessError, RunConfig};
use crate::coso_rl::{mix_seed, Trainer, Trajectory};
use crate::counterfactual::{weight_stats, CausalWeights, WeightHistogram};
use crate::par;
use crate::policy::PolicyParams;
use crate::textmdp::Env;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalStats {
    pub success_rate: f64,
    pub mean_return: f64,
    pub invalid_rate: f64,
}

/// Greedy-decoding evaluation over a fixed set of reset seeds.
pub fn evaluate_greedy(policy: &PolicyParams, env: &Env, episodes: usize, eval_seed: u64) -> Result<EvalStats, HarnessError> {
    let mut successes = 0usize;
    let mut total_return = 0.0;
    let mut steps = 0usize;
    let mut invalid = 0usize;
    let g = env.grammar();
    for ep in 0..episodes {
        let mut state = env.reset(mix_seed(&[eval_seed, ep as u64]));
        while !state.done {
            let y = policy.greedy_utterance(&state).map_err(|e| HarnessError::Eval(e.to_string()))?;
            let action = g.parse(&y.utterance).unwrap_or_else(|_| {
                invalid += 1;
                crate::textmdp::Action::NOOP
            });
            let out = env.step(&state, &action).map_err(|e| HarnessError::Eval(e.to_string()))?;
            steps += 1;
            total_return += out.reward;
            successes += out.success as usize;
            state = out.next_state;
        }
    }
    Ok(EvalStats {
        success_rate: successes as f64 / episodes as f64,
        mean_return: total_return / episodes as f64,
        invalid_rate: if steps == 0 { 0.0 } else { invalid as f64 / steps as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalPoint {
    pub iteration: u64,
    pub env_steps: u64,
    pub success_rate: f64,
    pub mean_return: f64,
    pub eval_invalid_rate: f64,
    pub train_invalid_rate: f64,
    pub train_success_rate: Option<f64>,
    pub mean_entropy: f64,
    pub mean_weighted_entropy: Option<f64>,
    pub weight_low_fraction: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedRun {
    pub env: String,
    pub arm: Arm,
    pub seed: u64,
    pub threshold: f64,
    pub curve: Vec<EvalPoint>,
    pub steps_to_threshold: Option<u64>,
    pub final_success: f64,
    pub final_return: f64,
    pub final_invalid_rate: f64,
    /// Weight histograms of the training buffer at each evaluation.
    pub histograms: Vec<(u64, WeightHistogram)>,
    /// Training invalid-format rate of the last iteration.
    pub final_train_invalid_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    pub env: String,
    pub arm: Arm,
    pub runs: Vec<SeedRun>,
}

pub fn buffer_weights(trajs: &[Trajectory]) -> Vec<CausalWeights> {
    trajs.iter().flat_map(|t| t.steps.iter()).filter_map(|s| s.weights.clone()).collect()
}

/// Initial trainer for one seed, with the configured logit offsets.
pub fn build_trainer(cfg: &RunConfig, seed: u64) -> Result<Trainer, HarnessError> {
    let env = cfg.env()?;
    let mut t = Trainer::new(env.clone(), cfg.arm_hyper(), seed).map_err(|e| HarnessError::Run { iteration: 0, message: e.to_string() })?;
    for b in &cfg.init_bias {
        let tok = env.vocab().lookup(&b.token).ok_or_else(|| HarnessError::Config(format!("unknown token {}", b.token)))?;
        t.policy.bias_position(b.position, tok, b.delta);
    }
    Ok(t)
}

pub fn seed_dir(cfg: &RunConfig, seed: u64) -> PathBuf {
    arm_dir(cfg).join(format!("seed_{seed}"))
}

pub fn arm_dir(cfg: &RunConfig) -> PathBuf {
    cfg.output_dir.join(&cfg.name).join(cfg.arm.name())
}

/// Trains one seed to the step budget. Writes the config copy, metrics JSONL,
/// curve CSV and checkpoint under `out` when given.
pub fn run_seed(cfg: &RunConfig, seed: u64, out: Option<&Path>) -> Result<(SeedRun, Trainer), HarnessError> {
    let mut t = build_trainer(cfg, seed)?;
    let env = t.env.clone();
    let threshold = cfg.threshold();
    let mut metrics = String::new();
    let mut curve = Vec::new();
    let mut histograms = Vec::new();
    let mut last_train_invalid = 0.0;
    while t.env_steps < cfg.total_env_steps {
        let iteration = t.iteration;
        let (report, trajs) =
            t.train_iteration_detailed().map_err(|e| HarnessError::Run { iteration, message: e.to_string() })?;
        metrics.push_str(&serde_json::to_string(&report).expect("report serializes"));
        metrics.push('\n');
        last_train_invalid = report.invalid_rate;
        let last = t.env_steps >= cfg.total_env_steps;
        if t.iteration % cfg.eval_every == 0 || last {
            let ev = evaluate_greedy(&t.policy, &env, cfg.eval_episodes, cfg.eval_seed)?;
            let weights = buffer_weights(&trajs);
            let hist = weight_stats(&weights).ok();
            curve.push(EvalPoint {
                iteration: t.iteration,
                env_steps: t.env_steps,
                success_rate: ev.success_rate,
                mean_return: ev.mean_return,
                eval_invalid_rate: ev.invalid_rate,
                train_invalid_rate: report.invalid_rate,
                train_success_rate: report.success_rate,
                mean_entropy: report.mean_entropy,
                mean_weighted_entropy: report.mean_weighted_entropy,
                weight_low_fraction: hist.as_ref().map(|h| h.low_fraction()),
            });
            if let Some(h) = hist {
                histograms.push((t.env_steps, h));
            }
        }
    }
    let steps_to_threshold = curve.iter().find(|p| p.success_rate >= threshold).map(|p| p.env_steps);
    let fin = curve.last().cloned();
    let run = SeedRun {
        env: env.id().into(),
        arm: cfg.arm,
        seed,
        threshold,
        steps_to_threshold,
        final_success: fin.as_ref().map_or(0.0, |p| p.success_rate),
        final_return: fin.as_ref().map_or(0.0, |p| p.mean_return),
        final_invalid_rate: fin.as_ref().map_or(0.0, |p| p.eval_invalid_rate),
        final_train_invalid_rate: last_train_invalid,
        curve,
        histograms,
    };
    if let Some(dir) = out {
        let single = RunConfig { seeds: vec![seed], ..cfg.clone() };
        write_atomic(&dir.join("config.toml"), single.to_toml().as_bytes())?;
        write_atomic(&dir.join("metrics.jsonl"), metrics.as_bytes())?;
        write_atomic(&dir.join("curve.csv"), curve_csv(&run.curve).as_bytes())?;
        if cfg.checkpoint {
            Checkpoint::from_trainer(&t).save(&dir.join("checkpoint.ckpt"))?;
        }
    }
    Ok((run, t))
}

pub fn curve_csv(curve: &[EvalPoint]) -> String {
    let mut s = String::from(
        "iteration,env_steps,success_rate,mean_return,eval_invalid_rate,train_invalid_rate,train_success_rate,mean_entropy,mean_weighted_entropy,weight_low_fraction\n",
    );
    for p in curve {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            p.iteration,
            p.env_steps,
            p.success_rate,
            p.mean_return,
            p.eval_invalid_rate,
            p.train_invalid_rate,
            fmt_opt(p.train_success_rate),
            p.mean_entropy,
            fmt_opt(p.mean_weighted_entropy),
            fmt_opt(p.weight_low_fraction)
        );
    }
    s
}

pub const SUMMARY_HEADER: &str =
    "env,arm,seed,threshold,steps_to_threshold,final_success,final_return,final_invalid_rate,final_train_invalid_rate,final_mean_entropy,final_mean_weighted_entropy\n";

pub fn summary_rows(runs: &[SeedRun]) -> String {
    let mut s = String::new();
    for r in runs {
        let last = r.curve.last();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.env,
            r.arm.name(),
            r.seed,
            r.threshold,
            r.steps_to_threshold.map(|v| v.to_string()).unwrap_or_default(),
            r.final_success,
            r.final_return,
            r.final_invalid_rate,
            r.final_train_invalid_rate,
            last.map_or(0.0, |p| p.mean_entropy),
            fmt_opt(last.and_then(|p| p.mean_weighted_entropy)),
        );
    }
    s
}

/// Runs every seed of `cfg` (in parallel) for its configured arm.
pub fn run_experiment(cfg: &RunConfig) -> Result<RunSummary, HarnessError> {
    cfg.validate()?;
    let runs = run_seeds(cfg, &cfg.seeds, true)?;
    let summary = format!("{SUMMARY_HEADER}{}", summary_rows(&runs));
    write_atomic(&arm_dir(cfg).join("summary.csv"), summary.as_bytes())?;
    Ok(RunSummary { name: cfg.name.clone(), env: cfg.env.clone(), arm: cfg.arm, runs })
}

pub(crate) fn run_seeds(cfg: &RunConfig, seeds: &[u64], write: bool) -> Result<Vec<SeedRun>, HarnessError> {
    par::map_slice(seeds, |&seed| {
        let dir = seed_dir(cfg, seed);
        run_seed(cfg, seed, write.then_some(dir.as_path())).map(|(r, _)| r)
    })
    .into_iter()
    .collect()
}
