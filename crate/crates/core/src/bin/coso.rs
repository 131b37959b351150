use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use coso::harness::{
    ablation_matrix, cf_report, format_theory_report, repeated_sampling_probe, run_experiment, run_theory_check,
    table_csv, threads_from_env, write_atomic, Checkpoint, RunConfig, OUT_DIR_ENV,
};
use coso::tabular_theory::TheoryCheckSpec;
use coso::textmdp::Env;

#[derive(Parser)]
#[command(name = "coso", version, about = "Counterfactual soft RL on toy text-action environments")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train the config's arm on every configured seed.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train every configured arm on every seed and compare them.
    Ablate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Per-step causal weights of a checkpoint's own rollouts (JSONL).
    CfReport {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 20)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; defaults to `$COSO_OUT_DIR/cf_report.jsonl` or `cf_report.jsonl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sample k utterances at one state and tabulate the parsed actions.
    Probe {
        #[arg(long)]
        ckpt: PathBuf,
        /// State description such as `screen=share,typed=0` or `c=3,tau=7`.
        #[arg(long)]
        state: String,
        #[arg(short = 'k', default_value_t = 10)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Verify the tabular lemmas on random finite MDPs.
    TheoryCheck {
        #[arg(long, default_value_t = 50)]
        instances: usize,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Environment listing and grammar dumps.
    Envs {
        #[arg(long)]
        dump_grammar: Option<String>,
    },
}

fn load_config(path: &Path) -> Result<RunConfig> {
    Ok(RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?.with_env_overrides())
}

/// `println!` that reports a closed stdout as an error instead of panicking.
macro_rules! out {
    ($($t:tt)*) => {
        writeln!(io::stdout(), $($t)*)?
    };
}

fn run(cli: Cli) -> Result<ExitCode> {
    coso::par::init_threads(threads_from_env());
    match cli.cmd {
        Cmd::Train { config } => {
            let cfg = load_config(&config)?;
            let summary = run_experiment(&cfg)?;
            for r in &summary.runs {
                out!(
                    "{} {} seed {}: final success {:.3}, steps to {:.2}: {}",
                    r.env,
                    r.arm.name(),
                    r.seed,
                    r.final_success,
                    r.threshold,
                    r.steps_to_threshold.map_or("not reached".into(), |s| s.to_string())
                );
            }
            out!("artifacts in {}", cfg.output_dir.join(&cfg.name).display());
        }
        Cmd::Ablate { config } => {
            let cfg = load_config(&config)?;
            let table = ablation_matrix(&cfg)?;
            write!(io::stdout(), "{}", table_csv(&table))?;
            out!("artifacts in {}", cfg.output_dir.join(&cfg.name).display());
        }
        Cmd::CfReport { ckpt, env, episodes, seed, out } => {
            let env = Env::from_id(&env)?;
            let ck = Checkpoint::load(&ckpt)?;
            let report = cf_report(&ck, &env, episodes, seed)?;
            let out = out.unwrap_or_else(|| {
                std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_default().join("cf_report.jsonl")
            });
            write_atomic(&out, report.to_jsonl().as_bytes())?;
            let hist = out.with_extension("histogram.json");
            write_atomic(&hist, serde_json::to_string_pretty(&report.histogram)?.as_bytes())?;
            out!("{} records -> {}", report.records.len(), out.display());
            out!("histogram -> {}", hist.display());
            out!("kind slot holds max weight in {:.1}% of steps", 100.0 * report.kind_max_fraction);
            out!(
                "mean raw weight: action slots {:.4}, filler slots {:.4}",
                report.mean_raw_action_slots, report.mean_raw_filler_slots
            );
            out!("fraction of weights in [0, 0.2): {:.3}", report.histogram.low_fraction());
        }
        Cmd::Probe { ckpt, state, k, seed } => {
            let ck = Checkpoint::load(&ckpt)?;
            let env = Env::from_id(ck.meta("env")?)?;
            let st = env.parse_state(&state)?;
            let res = repeated_sampling_probe(&ck, &env, &st, k, seed)?;
            out!("{}", serde_json::to_string_pretty(&res)?);
        }
        Cmd::TheoryCheck { instances, tol, seed, json } => {
            if instances == 0 || tol.is_nan() || tol <= 0.0 {
                bail!("instances must be positive and tol > 0");
            }
            let spec = TheoryCheckSpec { instances, tol, base_seed: seed, ..Default::default() };
            let report = run_theory_check(&spec);
            write!(io::stdout(), "{}", format_theory_report(&report))?;
            if let Some(path) = json {
                write_atomic(&path, serde_json::to_string_pretty(&report)?.as_bytes())?;
            }
            if !report.passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Cmd::Envs { dump_grammar } => match dump_grammar {
            Some(id) => write!(io::stdout(), "{}", Env::from_id(&id)?.dump())?,
            None => {
                for id in Env::IDS {
                    out!("{id}");
                }
            }
        },
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
