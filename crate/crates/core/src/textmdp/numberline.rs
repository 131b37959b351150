use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

/// Counter `c` and target `tau` on `[0, max]`; PLUS/MINUS move `c` by one.
#[derive(Debug, Clone)]
pub struct NumberLine {
    pub max: u8,
    pub horizon: u32,
    pub vocab: Vocab,
    pub grammar: UtteranceGrammar,
}

pub const PLUS_TOKEN: Token = 2;
pub const MINUS_TOKEN: Token = 3;
pub const STAY_TOKEN: Token = 4;

impl Default for NumberLine {
    fn default() -> Self {
        Self::new(10)
    }
}

impl NumberLine {
    pub fn new(max: u8) -> Self {
        let vocab = Vocab::new(vec![
            "<null>", "<eos>", "+", "-", "stay", "i", "think", "move", "the", "number", "up", "down", "now", "so",
            "target", "ok",
        ]);
        let grammar = UtteranceGrammar::new(
            vec![SlotRole::Filler, SlotRole::Filler, SlotRole::ActionKind],
            vec![(PLUS_TOKEN, ActionKind::Plus), (MINUS_TOKEN, ActionKind::Minus), (STAY_TOKEN, ActionKind::Noop)],
            vec![],
            vec![Action::NOOP, Action::simple(ActionKind::Plus), Action::simple(ActionKind::Minus)],
        );
        Self { max, horizon: 20, vocab, grammar }
    }

    pub fn feature_cards(&self) -> Vec<usize> {
        vec![self.max as usize + 1, self.max as usize + 1]
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        loop {
            let c = rng.random_range(0..=self.max);
            let tau = rng.random_range(0..=self.max);
            if c != tau {
                return EnvState { features: vec![c, tau], step_count: 0, done: false };
            }
        }
    }

    pub fn step(&self, s: &EnvState, a: &Action) -> StepOutcome {
        let (c, tau) = (s.features[0], s.features[1]);
        let (c2, mut reward) = match a.kind {
            ActionKind::Plus => (c.saturating_add(1).min(self.max), STEP_PENALTY),
            ActionKind::Minus => (c.saturating_sub(1), STEP_PENALTY),
            _ => (c, NOOP_PENALTY),
        };
        let success = c2 == tau;
        if success {
            reward = SUCCESS_REWARD;
        }
        let step_count = s.step_count + 1;
        let done = success || step_count >= self.horizon;
        StepOutcome { next_state: EnvState { features: vec![c2, tau], step_count, done }, reward, done, success }
    }

    pub fn parse_state(&self, spec: &str) -> Result<EnvState, EnvError> {
        let mut c = None;
        let mut tau = None;
        for (k, v) in parse_kv(spec)? {
            let val: u8 = v.parse().map_err(|_| EnvError::BadStateSpec(spec.to_string()))?;
            if val > self.max {
                return Err(EnvError::BadStateSpec(format!("{k}={v} exceeds {}", self.max)));
            }
            match k.as_str() {
                "c" => c = Some(val),
                "tau" => tau = Some(val),
                _ => return Err(EnvError::BadStateSpec(format!("unknown key `{k}`"))),
            }
        }
        match (c, tau) {
            (Some(c), Some(tau)) => Ok(EnvState { features: vec![c, tau], step_count: 0, done: false }),
            _ => Err(EnvError::BadStateSpec("numberline needs c=<int>,tau=<int>".into())),
        }
    }

    pub fn transition_table(&self) -> String {
        format!(
            "  PLUS: c <- min(c+1, {m}), reward {sp}\n  MINUS: c <- max(c-1, 0), reward {sp}\n  NOOP / parse error: c unchanged, reward {np}\n  c == tau after a move: reward {ok}, done\n  step_count == {h}: done\n",
            m = self.max,
            sp = STEP_PENALTY,
            np = NOOP_PENALTY,
            ok = SUCCESS_REWARD,
            h = self.horizon
        )
    }
}
