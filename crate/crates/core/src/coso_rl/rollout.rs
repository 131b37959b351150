use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{augmented_reward, EntropyPlacement, Hyperparams, LinearValue, RlError};
use crate::counterfactual::CausalWeights;
use crate::par;
use crate::policy::{PolicyParams, SampledUtterance};
use crate::textmdp::{Action, Env, EnvState};

/// One environment step with everything the updates need.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: EnvState,
    pub sample: SampledUtterance,
    pub action: Action,
    pub action_class: usize,
    pub parse_ok: bool,
    pub reward: f64,
    pub done: bool,
    pub success: bool,
    /// Filled in by the counterfactual phase.
    pub weights: Option<CausalWeights>,
    pub weighted_entropy: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}

/// A contiguous run of steps from one worker. Ends either at a terminal step
/// or at the rollout budget, in which case `bootstrap` holds the next state.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<StepRecord>,
    pub bootstrap: Option<EnvState>,
    /// Policy version the steps were sampled under.
    pub snapshot: u64,
}

impl Trajectory {
    pub fn is_complete(&self) -> bool {
        self.steps.last().is_some_and(|s| s.done)
    }

    pub fn episode_return(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

pub fn mix_seed(parts: &[u64]) -> u64 {
    // splitmix64 over the parts
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

fn run_worker(policy: &PolicyParams, env: &Env, steps: usize, seed: u64) -> Result<Vec<Trajectory>, RlError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut cur = Trajectory { steps: Vec::new(), bootstrap: None, snapshot: policy.version };
    let mut state = env.reset(rng.random());
    for _ in 0..steps {
        let sample = policy.sample_utterance(&state, &mut rng)?;
        let tr = env.step_utterance(&state, &sample.utterance)?;
        let success = tr.done && tr.reward == crate::textmdp::SUCCESS_REWARD;
        let action_class = env.grammar().action_class(&tr.action).unwrap_or(0);
        cur.steps.push(StepRecord {
            state: state.clone(),
            sample,
            action: tr.action,
            action_class,
            parse_ok: tr.parse_ok,
            reward: tr.reward,
            done: tr.done,
            success,
            weights: None,
            weighted_entropy: 0.0,
            value: 0.0,
            advantage: 0.0,
            ret: 0.0,
        });
        if tr.done {
            out.push(std::mem::replace(&mut cur, Trajectory { steps: Vec::new(), bootstrap: None, snapshot: policy.version }));
            state = env.reset(rng.random());
        } else {
            state = tr.next_state;
        }
    }
    if !cur.steps.is_empty() {
        cur.bootstrap = Some(state);
        out.push(cur);
    }
    Ok(out)
}

/// Runs `num_envs` independent workers for `steps_per_env` steps each from a
/// shared policy snapshot. Worker `w` is seeded from `(seed, iteration, w)`;
/// output is ordered by worker, so the result does not depend on threading.
pub fn collect_rollouts(
    policy: &PolicyParams,
    env: &Env,
    hyper: &Hyperparams,
    seed: u64,
    iteration: u64,
) -> Result<Vec<Trajectory>, RlError> {
    let per_worker = par::map_indices(hyper.num_envs, |w| {
        run_worker(policy, env, hyper.steps_per_env, mix_seed(&[seed, iteration, w as u64]))
    });
    let mut out = Vec::new();
    for r in per_worker {
        out.extend(r?);
    }
    Ok(out)
}

/// Fills `value`, `advantage` and `ret` with GAE(lambda) over each
/// trajectory. Under the reward-bonus placement the rewards used here are
/// augmented with the successor step's weighted entropy.
pub fn compute_advantages(trajs: &mut [Trajectory], value: &LinearValue, hyper: &Hyperparams) {
    let alpha = hyper.alpha;
    let gamma = hyper.gamma;
    for t in trajs.iter_mut() {
        let n = t.steps.len();
        for s in t.steps.iter_mut() {
            s.value = value.predict(&s.state.features);
        }
        let mut next_value = match (&t.bootstrap, t.is_complete()) {
            (Some(b), false) => value.predict(&b.features),
            _ => 0.0,
        };
        let mut gae = 0.0;
        for i in (0..n).rev() {
            let s = &t.steps[i];
            let r = match hyper.entropy_placement {
                EntropyPlacement::RewardBonus => {
                    let next_hb = if s.done { None } else { t.steps.get(i + 1).map(|x| x.weighted_entropy) };
                    augmented_reward(s.reward, next_hb, alpha, gamma)
                }
                EntropyPlacement::LossBonus => s.reward,
            };
            let nonterminal = if s.done { 0.0 } else { 1.0 };
            let delta = r + gamma * next_value * nonterminal - s.value;
            gae = delta + gamma * hyper.gae_lambda * nonterminal * gae;
            let v = s.value;
            let st = &mut t.steps[i];
            st.advantage = gae;
            st.ret = gae + v;
            next_value = v;
        }
    }
}
