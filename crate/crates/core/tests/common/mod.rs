#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use coso::coso_rl::{collect_rollouts, Hyperparams, Trainer};
use coso::counterfactual::{causal_weights, normalize_weights, NormalizeOpts, WeightMode};
use coso::policy::{Objective, PolicyParams, PolicySpec, ScoredSeq};
use coso::scm::Scm;
use coso::textmdp::{Env, SlotRole, Token};

pub const FD_H: f64 = 1e-5;
pub const FD_RTOL: f64 = 1e-4;

/// Random small policy with a batch of sampled sequences.
pub fn random_instance(seed: u64) -> (PolicyParams, Vec<ScoredSeq>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PolicySpec {
        vocab_size: rng.random_range(4..=7),
        n: rng.random_range(1..=4),
        feature_cards: vec![rng.random_range(2..=4), rng.random_range(2..=5)],
        context: rng.random_range(0..=3),
    };
    let weights: Vec<f64> = (0..spec.num_weights()).map(|_| rng.random_range(-1.5..1.5)).collect();
    let policy = PolicyParams::from_weights(spec.clone(), weights).unwrap();
    let batch = (0..rng.random_range(1..=6))
        .map(|_| {
            let state: Vec<u8> = spec.feature_cards.iter().map(|c| rng.random_range(0..*c as u8)).collect();
            let tokens: Vec<Token> = (0..spec.n).map(|_| rng.random_range(1..spec.vocab_size as Token)).collect();
            ScoredSeq { state, tokens }
        })
        .collect();
    (policy, batch)
}

/// Worst excess of `|analytic - central difference|` over `rtol * scale + 1e-9`
/// across all coordinates; <= 0 means the check passed.
pub fn fd_excess(policy: &PolicyParams, batch: &[ScoredSeq], obj: Objective<'_>) -> f64 {
    let g = policy.grad_objective(batch, obj).unwrap();
    let mut worst = f64::NEG_INFINITY;
    for j in 0..policy.weights.len() {
        let mut p = policy.clone();
        p.weights[j] = policy.weights[j] + FD_H;
        let up = p.objective_value(batch, obj).unwrap();
        p.weights[j] = policy.weights[j] - FD_H;
        let down = p.objective_value(batch, obj).unwrap();
        let fd = (up - down) / (2.0 * FD_H);
        let scale = g[j].abs().max(fd.abs());
        worst = worst.max((g[j] - fd).abs() - (FD_RTOL * scale + 1e-9));
    }
    worst
}

pub fn fd_check_all(instances: u64) -> f64 {
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..instances {
        let (policy, batch) = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xFD);
        let coefs: Vec<f64> = batch.iter().map(|_| rng.random_range(-2.0..2.0)).collect();
        let w: Vec<Vec<f64>> = batch.iter().map(|_| (0..policy.n()).map(|_| rng.random_range(0.0..1.0)).collect()).collect();
        for obj in [Objective::LogProbWeighted(&coefs), Objective::Entropy, Objective::WeightedEntropy(&w)] {
            worst = worst.max(fd_excess(&policy, &batch, obj));
        }
    }
    worst
}

/// Utterances drawn uniformly from the parts of the grammar the policy can
/// reach, mixed with uniformly random token strings.
pub fn grammar_samples(env: &Env, count: usize, seed: u64) -> Vec<(Vec<Token>, usize)> {
    let g = env.grammar();
    let v = env.vocab().size() as Token;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let mut y: Vec<Token> = (0..g.len()).map(|_| rng.random_range(1..v)).collect();
            if rng.random_bool(0.7) {
                // legal kind and arg most of the time
                for (i, role) in g.roles().iter().enumerate() {
                    if matches!(role, SlotRole::ActionKind | SlotRole::ActionArg) {
                        if let Some(legal) = g.legal_tokens(i) {
                            y[i] = legal[rng.random_range(0..legal.len())];
                        }
                    }
                }
            }
            let label = g.label(&y);
            (y, label)
        })
        .collect()
}

/// SCM trained on `pairs` with the trainer's null augmentation.
pub fn train_scm(env: &Env, pairs: &[(Vec<Token>, usize)], epochs: usize, lr: f64, seed: u64) -> Scm {
    let g = env.grammar();
    let mut scm = Scm::new(g.len(), env.vocab().size(), g.num_actions(), lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data: Vec<(Vec<Token>, usize)> = pairs.to_vec();
    for (y, _) in pairs {
        let mut z = y.clone();
        let i = rng.random_range(0..z.len());
        z[i] = coso::NULL;
        let l = g.label(&z);
        data.push((z, l));
    }
    for _ in 0..epochs {
        for i in (1..data.len()).rev() {
            let j = rng.random_range(0..=i);
            data.swap(i, j);
        }
        for chunk in data.chunks(128) {
            scm.update(chunk).unwrap();
        }
    }
    scm
}

pub fn scm_accuracy(scm: &Scm, pairs: &[(Vec<Token>, usize)]) -> f64 {
    pairs.iter().filter(|(y, a)| scm.predict(y).unwrap() == *a).count() as f64 / pairs.len() as f64
}

pub struct Localization {
    pub kind_max_fraction: f64,
    pub action_to_filler_ratio: f64,
    pub low_fraction: f64,
}

/// Causal-weight statistics of `scm` on valid utterances.
pub fn localization(env: &Env, scm: &Scm, pairs: &[(Vec<Token>, usize)]) -> Localization {
    let g = env.grammar();
    let mut kind_max = 0usize;
    let mut total = 0usize;
    let (mut act, mut act_n, mut fil, mut fil_n) = (0.0, 0usize, 0.0, 0usize);
    let mut low = 0usize;
    let mut all = 0usize;
    for (y, a) in pairs.iter().filter(|(y, _)| g.parse_tokens(y).is_ok()) {
        let w = normalize_weights(&causal_weights(scm, y, *a).unwrap(), WeightMode::Maxnorm, NormalizeOpts::default());
        let max = w.normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        kind_max += (w.normalized[g.kind_slot()] == max) as usize;
        total += 1;
        for (i, role) in g.roles().iter().enumerate() {
            match role {
                SlotRole::ActionKind | SlotRole::ActionArg => {
                    act += w.raw[i];
                    act_n += 1;
                }
                SlotRole::Filler => {
                    fil += w.raw[i];
                    fil_n += 1;
                }
                SlotRole::Format => {}
            }
            low += (w.normalized[i] < 0.2) as usize;
            all += 1;
        }
    }
    Localization {
        kind_max_fraction: kind_max as f64 / total as f64,
        action_to_filler_ratio: (act / act_n as f64) / (fil / fil_n as f64).max(1e-300),
        low_fraction: low as f64 / all as f64,
    }
}

pub fn small_hyper() -> Hyperparams {
    Hyperparams { num_envs: 4, steps_per_env: 32, minibatch_size: 64, scm_minibatch_size: 64, ..Default::default() }
}

pub fn trainer(env_id: &str, hyper: Hyperparams, seed: u64) -> Trainer {
    Trainer::new(Env::from_id(env_id).unwrap(), hyper, seed).unwrap()
}

/// Bit pattern fingerprint of a float slice.
pub fn fingerprint(xs: &[f64]) -> u64 {
    xs.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, x| (h ^ x.to_bits()).wrapping_mul(0x0000_0100_0000_01b3))
}

/// (utterance, parsed action) pairs from rollouts of the zero-parameter policy.
pub fn rollout_pairs(env: &Env, count: usize, seed: u64) -> Vec<(Vec<Token>, usize)> {
    let hyper = Hyperparams::default();
    let policy = PolicyParams::zeros(PolicySpec::for_env(env, hyper.context));
    let mut out = Vec::with_capacity(count);
    let mut it = 0;
    while out.len() < count {
        for t in collect_rollouts(&policy, env, &hyper, seed, it).unwrap() {
            out.extend(t.steps.iter().map(|s| (s.sample.utterance.tokens().to_vec(), s.action_class)));
        }
        it += 1;
    }
    out.truncate(count);
    out
}

