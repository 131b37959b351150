use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::coso_rl::{Hyperparams, WeightSource};
use crate::textmdp::Env;

pub const OUT_DIR_ENV: &str = "COSO_OUT_DIR";
pub const THREADS_ENV: &str = "COSO_THREADS";

/// Ablation arm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    /// No entropy term.
    Rl,
    /// Entropy with unit weights.
    RlH,
    /// Entropy with counterfactual weights.
    Coso,
}

impl Arm {
    pub const ALL: [Arm; 3] = [Arm::Rl, Arm::RlH, Arm::Coso];

    pub fn name(self) -> &'static str {
        match self {
            Arm::Rl => "rl",
            Arm::RlH => "rl_h",
            Arm::Coso => "coso",
        }
    }

    pub fn apply(self, hyper: &Hyperparams) -> Hyperparams {
        let mut h = hyper.clone();
        match self {
            Arm::Rl => h.alpha = 0.0,
            Arm::RlH => h.weight_source = WeightSource::Unit,
            Arm::Coso => h.weight_source = WeightSource::Scm,
        }
        h
    }
}

/// Additive logit offset applied to the initial policy at one position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitBias {
    pub position: usize,
    pub token: String,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: String,
    pub env: String,
    /// Arm used by `train`.
    pub arm: Arm,
    /// Arms compared by `ablate`.
    pub arms: Vec<Arm>,
    pub seeds: Vec<u64>,
    pub total_env_steps: u64,
    /// Evaluate every this many iterations (and after the last one).
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub eval_seed: u64,
    /// Defaults to 0.9 on numberline and 0.6 on menunav.
    pub success_threshold: Option<f64>,
    pub output_dir: PathBuf,
    /// Write a checkpoint at the end of each seed's run.
    pub checkpoint: bool,
    pub init_bias: Vec<InitBias>,
    pub hyper: Hyperparams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            env: "numberline".into(),
            arm: Arm::Coso,
            arms: Arm::ALL.to_vec(),
            seeds: vec![0],
            total_env_steps: 200_000,
            eval_every: 5,
            eval_episodes: 50,
            eval_seed: 1_000_003,
            success_threshold: None,
            output_dir: PathBuf::from("runs"),
            checkpoint: true,
            init_bias: Vec::new(),
            hyper: Hyperparams::default(),
        }
    }
}

pub fn default_threshold(env: &str) -> f64 {
    match env {
        "menunav" => 0.6,
        _ => 0.9,
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        Env::from_id(&self.env).map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty".into());
        }
        if self.arms.is_empty() {
            return bad("arms must be nonempty".into());
        }
        if self.eval_every == 0 || self.eval_episodes == 0 {
            return bad("eval_every and eval_episodes must be positive".into());
        }
        if let Some(t) = self.success_threshold {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("success_threshold {t} outside [0, 1]"));
            }
        }
        let env = self.env()?;
        for b in &self.init_bias {
            if b.position >= env.grammar().len() || env.vocab().lookup(&b.token).is_none() {
                return bad(format!("init_bias {b:?} does not fit env {}", self.env));
            }
        }
        self.hyper.validate().map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn env(&self) -> Result<Env, HarnessError> {
        Env::from_id(&self.env).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn threshold(&self) -> f64 {
        self.success_threshold.unwrap_or_else(|| default_threshold(&self.env))
    }

    /// Copy of this config with the arm fixed.
    pub fn for_arm(&self, arm: Arm) -> RunConfig {
        RunConfig { arm, ..self.clone() }
    }

    pub fn arm_hyper(&self) -> Hyperparams {
        self.arm.apply(&self.hyper)
    }

    /// Applies the output-directory override from the environment.
    pub fn with_env_overrides(mut self) -> Self {
        if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|d| !d.is_empty()) {
            self.output_dir = PathBuf::from(dir);
        }
        self
    }
}

/// Thread count from the environment, if set and valid.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.parse().ok()).filter(|n| *n > 0)
}
