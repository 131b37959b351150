use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::checkpoint::Checkpoint;
use super::HarnessError;
use crate::coso_rl::mix_seed;
use crate::counterfactual::{causal_weights, normalize_weights, weight_stats, CausalWeights, NormalizeOpts, WeightHistogram, WeightMode};
use crate::textmdp::{Action, Env, EnvState, SlotRole};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfRecord {
    pub episode: usize,
    pub step: u32,
    pub state: String,
    pub tokens: Vec<String>,
    pub roles: Vec<String>,
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub action: String,
    pub parse_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CfReport {
    pub env: String,
    pub records: Vec<CfRecord>,
    pub histogram: WeightHistogram,
    /// Fraction of steps whose ACTION_KIND slot holds the largest normalized weight.
    pub kind_max_fraction: f64,
    pub mean_raw_action_slots: f64,
    pub mean_raw_filler_slots: f64,
}

impl CfReport {
    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&serde_json::to_string(r).expect("record serializes"));
            s.push('\n');
        }
        s
    }
}

fn role_name(r: SlotRole) -> &'static str {
    match r {
        SlotRole::Filler => "filler",
        SlotRole::ActionKind => "action_kind",
        SlotRole::ActionArg => "action_arg",
        SlotRole::Format => "format",
    }
}

/// Samples `episodes` episodes with the checkpoint's policy and records the
/// surrogate's causal weights for every step.
pub fn cf_report(ck: &Checkpoint, env: &Env, episodes: usize, seed: u64) -> Result<CfReport, HarnessError> {
    let policy = ck.policy(env)?;
    let scm = ck.scm(env)?;
    let g = env.grammar();
    let vocab = env.vocab();
    let roles: Vec<String> = g.roles().iter().map(|r| role_name(*r).to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0xCF]));
    let mut records = Vec::new();
    let mut weights: Vec<CausalWeights> = Vec::new();
    let err = |e: String| HarnessError::Eval(e);
    for episode in 0..episodes {
        let mut state = env.reset(mix_seed(&[seed, episode as u64]));
        while !state.done {
            let y = policy.sample_utterance(&state, &mut rng).map_err(|e| err(e.to_string()))?;
            let tokens = y.utterance.tokens().to_vec();
            let tr = env.step_utterance(&state, &y.utterance).map_err(|e| err(e.to_string()))?;
            let class = g.action_class(&tr.action).unwrap_or(0);
            let raw = causal_weights(&scm, &tokens, class).map_err(|e| err(e.to_string()))?;
            let w = normalize_weights(&raw, WeightMode::Maxnorm, NormalizeOpts::default());
            records.push(CfRecord {
                episode,
                step: state.step_count,
                state: env.describe_state(&state),
                tokens: tokens.iter().map(|t| vocab.name(*t).to_string()).collect(),
                roles: roles.clone(),
                raw: w.raw.clone(),
                normalized: w.normalized.clone(),
                action: tr.action.to_string(),
                parse_ok: tr.parse_ok,
            });
            weights.push(w);
            state = tr.next_state;
        }
    }
    let histogram = weight_stats(&weights).map_err(|e| err(e.to_string()))?;
    let kind = g.kind_slot();
    let kind_max = weights
        .iter()
        .filter(|w| {
            let max = w.normalized.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            w.normalized[kind] == max
        })
        .count();
    let mut action_sum = (0.0, 0usize);
    let mut filler_sum = (0.0, 0usize);
    for w in &weights {
        for (i, role) in g.roles().iter().enumerate() {
            match role {
                SlotRole::ActionKind | SlotRole::ActionArg => {
                    action_sum.0 += w.raw[i];
                    action_sum.1 += 1;
                }
                SlotRole::Filler => {
                    filler_sum.0 += w.raw[i];
                    filler_sum.1 += 1;
                }
                SlotRole::Format => {}
            }
        }
    }
    let mean = |(s, c): (f64, usize)| if c == 0 { 0.0 } else { s / c as f64 };
    Ok(CfReport {
        env: env.id().into(),
        kind_max_fraction: kind_max as f64 / weights.len() as f64,
        mean_raw_action_slots: mean(action_sum),
        mean_raw_filler_slots: mean(filler_sum),
        records,
        histogram,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub state: String,
    pub k: usize,
    pub samples: Vec<String>,
    /// Parsed action (Display form) to count; format errors are excluded.
    pub actions: BTreeMap<String, usize>,
    pub distinct_actions: usize,
    pub invalid: usize,
}

impl ProbeResult {
    pub fn contains(&self, action: &Action) -> bool {
        self.actions.contains_key(&action.to_string())
    }
}

/// Draws `k` utterances at `state` and tabulates the parsed actions.
pub fn repeated_sampling_probe(ck: &Checkpoint, env: &Env, state: &EnvState, k: usize, seed: u64) -> Result<ProbeResult, HarnessError> {
    if k == 0 {
        return Err(HarnessError::Config("k must be at least 1".into()));
    }
    let policy = ck.policy(env)?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, 0x9B0B]));
    let vocab = env.vocab();
    let mut samples = Vec::with_capacity(k);
    let mut actions = BTreeMap::new();
    let mut invalid = 0;
    for _ in 0..k {
        let y = policy.sample_utterance(state, &mut rng).map_err(|e| HarnessError::Eval(e.to_string()))?;
        let text: Vec<&str> = y.utterance.tokens().iter().map(|t| vocab.name(*t)).collect();
        samples.push(text.join(" "));
        match env.grammar().parse(&y.utterance) {
            Ok(a) => *actions.entry(a.to_string()).or_insert(0) += 1,
            Err(_) => invalid += 1,
        }
    }
    Ok(ProbeResult { state: env.describe_state(state), k, samples, distinct_actions: actions.len(), actions, invalid })
}
