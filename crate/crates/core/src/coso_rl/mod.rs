//! Causal-weighted entropy RL: the objective terms, PPO- and AWR-style
//! updates, and the rollout / counterfactual / update training iteration.

mod awr;
mod iteration;
mod ppo;
mod rollout;
mod value;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use awr::awr_update;
pub use iteration::{Phase, Trainer};
pub use ppo::ppo_update;
pub use rollout::{collect_rollouts, compute_advantages, mix_seed, StepRecord, Trajectory};
pub use value::LinearValue;

use crate::counterfactual::{CounterfactualError, NormalizeOpts, WeightMode};
use crate::policy::PolicyError;
use crate::scm::ScmError;
use crate::textmdp::EnvError;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("weighted entropy: {h} entropies vs {b} weights")]
    LengthMismatch { h: usize, b: usize },
    #[error("trajectories were collected under snapshot {collected}, policy is at {current}")]
    StaleTrajectories { collected: u64, current: u64 },
    #[error("no trajectories to learn from")]
    EmptyBatch,
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error(transparent)]
    Counterfactual(#[from] CounterfactualError),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// Where the entropy term enters the update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyPlacement {
    /// Subtract `alpha * mean(H^B)` from the policy loss.
    LossBonus,
    /// Fold `gamma * alpha * H^B(next)` into the rewards before advantages.
    RewardBonus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Ppo,
    Awr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AwrWeighting {
    /// `min(exp(A / beta), clamp)`
    Exp,
    /// `1[A > threshold]` (filtered behavior cloning)
    Filter,
}

/// Source of the per-token weights `B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    /// `B = 1` everywhere (naive entropy).
    Unit,
    /// Counterfactual weights from the surrogate model.
    Scm,
    /// Every weight set to this constant (test hook).
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub alpha: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub optimizer: Optimizer,
    pub awr_beta: f64,
    pub awr_weighting: AwrWeighting,
    pub awr_threshold: f64,
    pub awr_clamp: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub scm_lr: f64,
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    pub num_envs: usize,
    pub steps_per_env: usize,
    pub minibatch_size: usize,
    pub scm_epochs: usize,
    pub scm_minibatch_size: usize,
    /// Keep SCM training pairs across iterations instead of a fresh buffer.
    pub scm_persistent_buffer: bool,
    /// Add one copy of each stored pair with a random position set to NULL,
    /// labeled by the parser, so interventions are in the training domain.
    pub scm_null_augment: bool,
    pub weight_source: WeightSource,
    pub weight_mode: WeightMode,
    pub weight_floor: f64,
    pub weight_eps: f64,
    pub entropy_placement: EntropyPlacement,
    /// Previous tokens visible to the policy.
    pub context: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            optimizer: Optimizer::Ppo,
            awr_beta: 1.0,
            awr_weighting: AwrWeighting::Exp,
            awr_threshold: 0.0,
            awr_clamp: 20.0,
            policy_lr: 0.01,
            value_lr: 0.05,
            scm_lr: 1e-3,
            max_grad_norm: 5.0,
            normalize_advantages: true,
            num_envs: 8,
            steps_per_env: 128,
            minibatch_size: 256,
            scm_epochs: 2,
            scm_minibatch_size: 128,
            scm_persistent_buffer: false,
            scm_null_augment: true,
            weight_source: WeightSource::Scm,
            weight_mode: WeightMode::Maxnorm,
            weight_floor: 0.01,
            weight_eps: 1e-6,
            entropy_placement: EntropyPlacement::LossBonus,
            context: 3,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: &str| Err(RlError::Hyper(m.to_string()));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be >= 0");
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return bad("gamma must be in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must be in [0, 1]");
        }
        if self.clip_eps <= 0.0 {
            return bad("clip_eps must be > 0");
        }
        if self.awr_beta <= 0.0 {
            return bad("awr_beta must be > 0");
        }
        if self.num_envs == 0 || self.steps_per_env == 0 || self.minibatch_size == 0 || self.scm_minibatch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if let WeightSource::Constant(c) = self.weight_source {
            if c < 0.0 {
                return bad("constant weights must be >= 0");
            }
        }
        Ok(())
    }

    pub fn normalize_opts(&self) -> NormalizeOpts {
        NormalizeOpts { eps: self.weight_eps, floor: self.weight_floor }
    }

    pub fn rollout_steps(&self) -> usize {
        self.num_envs * self.steps_per_env
    }
}

/// `H^B = sum_i B_i * H_i`.
pub fn weighted_entropy(h: &[f64], b: &[f64]) -> Result<f64, RlError> {
    if h.len() != b.len() {
        return Err(RlError::LengthMismatch { h: h.len(), b: b.len() });
    }
    Ok(h.iter().zip(b).map(|(h, b)| h * b).sum())
}

/// `r + gamma * alpha * H^B(next)`; `None` marks a terminal step.
pub fn augmented_reward(r: f64, next_weighted_entropy: Option<f64>, alpha: f64, gamma: f64) -> f64 {
    match next_weighted_entropy {
        Some(hb) if alpha != 0.0 => r + gamma * alpha * hb,
        _ => r,
    }
}

/// Metrics from one training iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    pub schema: u32,
    pub iteration: u64,
    pub env_steps: u64,
    pub buffer_size: usize,
    pub episodes: usize,
    pub mean_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub mean_entropy: f64,
    /// Absent when the entropy term is off.
    pub mean_weighted_entropy: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub scm_loss: f64,
    pub invalid_rate: f64,
    pub grad_norm: f64,
    pub first_ratio_max_dev: f64,
    pub skipped: bool,
    pub events: Vec<Phase>,
}

pub const REPORT_SCHEMA: u32 = 1;

impl UpdateReport {
    pub(crate) fn empty(iteration: u64) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            iteration,
            env_steps: 0,
            buffer_size: 0,
            episodes: 0,
            mean_return: None,
            success_rate: None,
            mean_entropy: 0.0,
            mean_weighted_entropy: None,
            policy_loss: 0.0,
            value_loss: 0.0,
            scm_loss: 0.0,
            invalid_rate: 0.0,
            grad_norm: 0.0,
            first_ratio_max_dev: 0.0,
            skipped: false,
            events: Vec::new(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_entropy_cases() {
        let h = [0.5, 0.2, 1.0];
        assert_eq!(weighted_entropy(&h, &[1.0; 3]).unwrap(), h.iter().sum::<f64>());
        assert_eq!(weighted_entropy(&h, &[0.0; 3]).unwrap(), 0.0);
        assert!((weighted_entropy(&h, &[0.01, 0.01, 1.0]).unwrap() - 1.007).abs() < 1e-12);
        assert!(matches!(weighted_entropy(&h, &[1.0]), Err(RlError::LengthMismatch { .. })));
    }

    #[test]
    fn augmented_reward_cases() {
        assert_eq!(augmented_reward(-0.01, Some(2.0), 0.0, 0.99), -0.01);
        assert_eq!(augmented_reward(1.0, None, 1.0, 0.99), 1.0);
        assert!((augmented_reward(-0.01, Some(1.007), 1.0, 0.99) - 0.98693).abs() < 1e-12);
    }

    #[test]
    fn hyper_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let h = Hyperparams { gamma: 1.0, ..Default::default() };
        assert!(h.validate().is_err());
        let h = Hyperparams { alpha: -1.0, ..Default::default() };
        assert!(h.validate().is_err());
        let h = Hyperparams { clip_eps: 0.0, ..Default::default() };
        assert!(h.validate().is_err());
    }
}
