use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::effective_weights;
use super::rollout::mix_seed;
use super::{
    awr_update, collect_rollouts, compute_advantages, ppo_update, weighted_entropy, Hyperparams, LinearValue,
    Optimizer, RlError, Trajectory, UpdateReport,
};
use crate::counterfactual::{causal_weights_batch, normalize_weights};
use crate::optim::Adam;
use crate::policy::{PolicyParams, PolicySpec};
use crate::scm::Scm;
use crate::textmdp::{Env, Token, NULL};

/// Phases of one iteration, in the order they ran.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Rollout,
    Counterfactual,
    ScmUpdate,
    PolicyUpdate,
}

/// Owns the learned components and the update-side random streams.
///
/// Each iteration: collect rollouts into a fresh buffer, compute causal
/// weights with the current surrogate, update the surrogate by cross-entropy,
/// then update the policy.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub env: Env,
    pub hyper: Hyperparams,
    pub seed: u64,
    pub policy: PolicyParams,
    pub policy_opt: Adam,
    pub value: LinearValue,
    pub scm: Scm,
    scm_buffer: Vec<(Vec<Token>, usize)>,
    update_rng: ChaCha8Rng,
    scm_rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
}

impl Trainer {
    pub fn new(env: Env, hyper: Hyperparams, seed: u64) -> Result<Self, RlError> {
        let policy = PolicyParams::zeros(PolicySpec::for_env(&env, hyper.context));
        Self::with_policy(env, hyper, seed, policy)
    }

    pub fn with_policy(env: Env, hyper: Hyperparams, seed: u64, policy: PolicyParams) -> Result<Self, RlError> {
        hyper.validate()?;
        let spec = PolicySpec::for_env(&env, hyper.context);
        if policy.spec != spec {
            return Err(RlError::Hyper(format!("policy shape {:?} does not match env {}", policy.spec, env.id())));
        }
        let g = env.grammar();
        let scm = Scm::new(g.len(), env.vocab().size(), g.num_actions(), hyper.scm_lr);
        let value = LinearValue::new(env.feature_cards(), hyper.value_lr);
        let policy_opt = Adam::new(policy.weights.len(), hyper.policy_lr);
        Ok(Self {
            env,
            policy,
            policy_opt,
            value,
            scm,
            scm_buffer: Vec::new(),
            update_rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5550])),
            scm_rng: ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x5C30])),
            iteration: 0,
            env_steps: 0,
            hyper,
            seed,
        })
    }

    pub fn rollout(&self) -> Result<Vec<Trajectory>, RlError> {
        collect_rollouts(&self.policy, &self.env, &self.hyper, self.seed, self.iteration)
    }

    /// Attaches causal weights (from the current surrogate) and the resulting
    /// weighted entropy to every stored step.
    pub fn counterfactual_phase(&self, trajs: &mut [Trajectory]) -> Result<(), RlError> {
        let items: Vec<(Vec<Token>, usize)> = trajs
            .iter()
            .flat_map(|t| t.steps.iter())
            .map(|s| (s.sample.utterance.tokens().to_vec(), s.action_class))
            .collect();
        let raw = causal_weights_batch(&self.scm, &items)?;
        let opts = self.hyper.normalize_opts();
        let n = self.env.grammar().len();
        let mut it = raw.into_iter();
        for s in trajs.iter_mut().flat_map(|t| t.steps.iter_mut()) {
            let w = normalize_weights(&it.next().expect("one weight vector per step"), self.hyper.weight_mode, opts);
            let eff = effective_weights(Some(&w), &self.hyper, n);
            s.weighted_entropy = weighted_entropy(&s.sample.entropies, &eff)?;
            s.weights = Some(w);
        }
        Ok(())
    }

    /// Cross-entropy epochs over the stored (utterance, parsed action) pairs.
    pub fn scm_phase(&mut self, trajs: &[Trajectory]) -> Result<f64, RlError> {
        let mut pairs: Vec<(Vec<Token>, usize)> =
            trajs.iter().flat_map(|t| t.steps.iter()).map(|s| (s.sample.utterance.tokens().to_vec(), s.action_class)).collect();
        if self.hyper.scm_null_augment {
            let g = self.env.grammar();
            let extra: Vec<(Vec<Token>, usize)> = pairs
                .iter()
                .map(|(y, _)| {
                    let mut z = y.clone();
                    z[self.scm_rng.random_range(0..y.len())] = NULL;
                    let label = g.label(&z);
                    (z, label)
                })
                .collect();
            pairs.extend(extra);
        }
        if self.hyper.scm_persistent_buffer {
            self.scm_buffer.extend(pairs);
        } else {
            self.scm_buffer = pairs;
        }
        let mut order: Vec<usize> = (0..self.scm_buffer.len()).collect();
        let mut total = 0.0;
        let mut count = 0;
        for _ in 0..self.hyper.scm_epochs {
            order.shuffle(&mut self.scm_rng);
            for chunk in order.chunks(self.hyper.scm_minibatch_size) {
                let batch: Vec<(Vec<Token>, usize)> = chunk.iter().map(|&i| self.scm_buffer[i].clone()).collect();
                total += self.scm.update(&batch)?;
                count += 1;
            }
        }
        Ok(if count > 0 { total / count as f64 } else { 0.0 })
    }

    pub fn policy_phase(&mut self, trajs: &mut [Trajectory]) -> Result<UpdateReport, RlError> {
        compute_advantages(trajs, &self.value, &self.hyper);
        match self.hyper.optimizer {
            Optimizer::Ppo => {
                ppo_update(&mut self.policy, &mut self.policy_opt, &mut self.value, trajs, &self.hyper, &mut self.update_rng)
            }
            Optimizer::Awr => {
                awr_update(&mut self.policy, &mut self.policy_opt, &mut self.value, trajs, &self.hyper, &mut self.update_rng)
            }
        }
    }

    pub fn train_iteration(&mut self) -> Result<UpdateReport, RlError> {
        self.train_iteration_detailed().map(|(r, _)| r)
    }

    /// Like `train_iteration`, also returning the weighted rollout buffer.
    pub fn train_iteration_detailed(&mut self) -> Result<(UpdateReport, Vec<Trajectory>), RlError> {
        let mut events = Vec::with_capacity(4);
        let mut trajs = self.rollout()?;
        events.push(Phase::Rollout);
        self.counterfactual_phase(&mut trajs)?;
        events.push(Phase::Counterfactual);
        let scm_loss = self.scm_phase(&trajs)?;
        events.push(Phase::ScmUpdate);
        let mut report = self.policy_phase(&mut trajs)?;
        events.push(Phase::PolicyUpdate);

        let steps: Vec<_> = trajs.iter().flat_map(|t| t.steps.iter()).collect();
        let complete: Vec<&Trajectory> = trajs.iter().filter(|t| t.is_complete() && t.steps[0].state.step_count == 0).collect();
        self.env_steps += steps.len() as u64;
        report.iteration = self.iteration;
        report.env_steps = self.env_steps;
        report.buffer_size = steps.len();
        report.episodes = complete.len();
        if !complete.is_empty() {
            let k = complete.len() as f64;
            report.mean_return = Some(complete.iter().map(|t| t.episode_return()).sum::<f64>() / k);
            report.success_rate =
                Some(complete.iter().filter(|t| t.steps.last().is_some_and(|s| s.success)).count() as f64 / k);
        }
        let m = steps.len() as f64;
        report.mean_entropy = steps.iter().map(|s| s.sample.entropies.iter().sum::<f64>()).sum::<f64>() / m;
        report.mean_weighted_entropy =
            (self.hyper.alpha != 0.0).then(|| steps.iter().map(|s| s.weighted_entropy).sum::<f64>() / m);
        report.invalid_rate = steps.iter().filter(|s| !s.parse_ok).count() as f64 / m;
        report.scm_loss = scm_loss;
        report.events = events;
        self.iteration += 1;
        Ok((report, trajs))
    }
}
