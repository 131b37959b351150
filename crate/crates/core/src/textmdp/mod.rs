//! Toy environments whose actions are produced by parsing token utterances.
//!
//! Two environments are registered: `numberline` (move a counter toward a
//! target) and `menunav` (navigate a small screen graph with a trap screen).
//! Environments are stateless definitions; all episode state lives in
//! [`EnvState`], so any number of episodes can run concurrently.

mod grammar;
pub mod menunav;
pub mod numberline;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use grammar::{ParseError, SlotRole, UtteranceGrammar};
pub use menunav::{MenuNav, Screen};
pub use numberline::NumberLine;

pub type Token = u16;

/// Intervention-only symbol. Never produced by a policy.
pub const NULL: Token = 0;
pub const EOS: Token = 1;

/// Reward for reaching the goal.
pub const SUCCESS_REWARD: f64 = 1.0;
pub const STEP_PENALTY: f64 = -0.01;
/// Charged for NOOP and for unparseable utterances.
pub const NOOP_PENALTY: f64 = -0.05;
pub const REWARD_MIN: f64 = NOOP_PENALTY;
pub const REWARD_MAX: f64 = SUCCESS_REWARD;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("unknown environment id `{0}`")]
    UnknownEnv(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("action {0} is not in this environment's action set")]
    InvalidAction(Action),
    #[error("utterance has length {got}, expected {expected}")]
    BadLength { expected: usize, got: usize },
    #[error("token {token} at position {pos} is outside the vocabulary of size {size}")]
    TokenOutOfVocab { pos: usize, token: Token, size: usize },
    #[error("NULL token at position {0}")]
    NullToken(usize),
    #[error("bad state spec: {0}")]
    BadStateSpec(String),
}

/// Token vocabulary. Id 0 is NULL and id 1 is EOS in every vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    names: Vec<&'static str>,
}

impl Vocab {
    pub fn new(names: Vec<&'static str>) -> Self {
        assert!(names.len() >= 3 && names.len() <= 64);
        assert_eq!(names[NULL as usize], "<null>");
        assert_eq!(names[EOS as usize], "<eos>");
        Self { names }
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn name(&self, t: Token) -> &'static str {
        self.names.get(t as usize).copied().unwrap_or("<oov>")
    }

    pub fn lookup(&self, name: &str) -> Option<Token> {
        self.names.iter().position(|n| *n == name).map(|i| i as Token)
    }
}

/// A policy output: exactly `n` non-NULL tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Utterance(Vec<Token>);

impl Utterance {
    pub fn new(tokens: Vec<Token>, vocab_size: usize) -> Result<Self, EnvError> {
        for (pos, &t) in tokens.iter().enumerate() {
            if t == NULL {
                return Err(EnvError::NullToken(pos));
            }
            if t as usize >= vocab_size {
                return Err(EnvError::TokenOutOfVocab { pos, token: t, size: vocab_size });
            }
        }
        Ok(Self(tokens))
    }

    /// Pads with EOS up to length `n`. Longer inputs are rejected.
    pub fn padded(mut tokens: Vec<Token>, n: usize, vocab_size: usize) -> Result<Self, EnvError> {
        if tokens.len() > n {
            return Err(EnvError::BadLength { expected: n, got: tokens.len() });
        }
        tokens.resize(n, EOS);
        Self::new(tokens, vocab_size)
    }

    pub fn tokens(&self) -> &[Token] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ActionKind {
    Noop,
    Plus,
    Minus,
    Click,
    Back,
    Home,
    Type,
}

impl ActionKind {
    pub fn takes_payload(self) -> bool {
        matches!(self, ActionKind::Click)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub payload: Option<u8>,
}

impl Action {
    pub const NOOP: Action = Action { kind: ActionKind::Noop, payload: None };

    pub fn simple(kind: ActionKind) -> Self {
        Self { kind, payload: None }
    }

    pub fn click(slot: u8) -> Self {
        Self { kind: ActionKind::Click, payload: Some(slot) }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            ActionKind::Noop => "NOOP",
            ActionKind::Plus => "PLUS",
            ActionKind::Minus => "MINUS",
            ActionKind::Click => "CLICK",
            ActionKind::Back => "BACK",
            ActionKind::Home => "HOME",
            ActionKind::Type => "TYPE",
        };
        match self.payload {
            Some(p) => write!(f, "{name}({p})"),
            None => f.write_str(name),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvState {
    /// Env-specific small integers, each within its declared cardinality.
    pub features: Vec<u8>,
    pub step_count: u32,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: EnvState,
    pub reward: f64,
    pub done: bool,
    /// Goal reached (as opposed to timing out).
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub utterance: Utterance,
    pub action: Action,
    pub reward: f64,
    pub next_state: EnvState,
    pub done: bool,
    pub parse_ok: bool,
}

/// Registered environments.
#[derive(Debug, Clone)]
pub enum Env {
    NumberLine(NumberLine),
    MenuNav(MenuNav),
}

impl Env {
    pub const IDS: [&'static str; 2] = ["numberline", "menunav"];

    pub fn from_id(id: &str) -> Result<Self, EnvError> {
        match id {
            "numberline" => Ok(Env::NumberLine(NumberLine::default())),
            "menunav" => Ok(Env::MenuNav(MenuNav::default())),
            other => Err(EnvError::UnknownEnv(other.to_string())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            Env::NumberLine(_) => "numberline",
            Env::MenuNav(_) => "menunav",
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            Env::NumberLine(e) => &e.vocab,
            Env::MenuNav(e) => &e.vocab,
        }
    }

    pub fn grammar(&self) -> &UtteranceGrammar {
        match self {
            Env::NumberLine(e) => &e.grammar,
            Env::MenuNav(e) => &e.grammar,
        }
    }

    /// Cardinality of each state feature.
    pub fn feature_cards(&self) -> Vec<usize> {
        match self {
            Env::NumberLine(e) => e.feature_cards(),
            Env::MenuNav(e) => e.feature_cards(),
        }
    }

    pub fn horizon(&self) -> u32 {
        match self {
            Env::NumberLine(e) => e.horizon,
            Env::MenuNav(e) => e.horizon,
        }
    }

    pub fn reset(&self, seed: u64) -> EnvState {
        match self {
            Env::NumberLine(e) => e.reset(seed),
            Env::MenuNav(e) => e.reset(seed),
        }
    }

    pub fn step(&self, state: &EnvState, action: &Action) -> Result<StepOutcome, EnvError> {
        if state.done || state.step_count >= self.horizon() {
            return Err(EnvError::EpisodeFinished);
        }
        if !self.grammar().actions().contains(action) {
            return Err(EnvError::InvalidAction(*action));
        }
        match self {
            Env::NumberLine(e) => Ok(e.step(state, action)),
            Env::MenuNav(e) => Ok(e.step(state, action)),
        }
    }

    /// Parses `y` and steps; a parse failure executes NOOP (with its penalty).
    pub fn step_utterance(&self, state: &EnvState, y: &Utterance) -> Result<Transition, EnvError> {
        let (action, parse_ok) = match self.grammar().parse(y) {
            Ok(a) => (a, true),
            Err(ParseError::BadLength { expected, got }) => return Err(EnvError::BadLength { expected, got }),
            Err(_) => (Action::NOOP, false),
        };
        let out = self.step(state, &action)?;
        Ok(Transition {
            state: state.clone(),
            utterance: y.clone(),
            action,
            reward: out.reward,
            next_state: out.next_state,
            done: out.done,
            parse_ok,
        })
    }

    /// Parses a `key=value,key=value` state description (used by the probe CLI).
    pub fn parse_state(&self, spec: &str) -> Result<EnvState, EnvError> {
        match self {
            Env::NumberLine(e) => e.parse_state(spec),
            Env::MenuNav(e) => e.parse_state(spec),
        }
    }

    pub fn describe_state(&self, s: &EnvState) -> String {
        match self {
            Env::NumberLine(_) => format!("c={},tau={}", s.features[0], s.features[1]),
            Env::MenuNav(_) => {
                format!("screen={},typed={}", Screen::from_index(s.features[0]).name(), s.features[1])
            }
        }
    }

    /// Human-readable grammar and transition tables.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        let g = self.grammar();
        let v = self.vocab();
        out.push_str(&format!("env: {}\nhorizon: {}\nvocab_size: {}\nutterance_length: {}\n", self.id(), self.horizon(), v.size(), g.len()));
        out.push_str("vocab:\n");
        for t in 0..v.size() {
            out.push_str(&format!("  {t:>2} {}\n", v.name(t as Token)));
        }
        out.push_str("slots:\n");
        for (i, role) in g.roles().iter().enumerate() {
            let legal = match g.legal_tokens(i) {
                Some(ts) => ts.iter().map(|t| v.name(*t)).collect::<Vec<_>>().join(" "),
                None => "any".to_string(),
            };
            out.push_str(&format!("  {i} {role:?}: {legal}\n"));
        }
        out.push_str("actions:\n");
        for (k, a) in g.actions().iter().enumerate() {
            out.push_str(&format!("  class {k}: {a}\n"));
        }
        out.push_str("transitions:\n");
        match self {
            Env::NumberLine(e) => out.push_str(&e.transition_table()),
            Env::MenuNav(e) => out.push_str(&e.transition_table()),
        }
        out
    }
}

pub(crate) fn parse_kv(spec: &str) -> Result<Vec<(String, String)>, EnvError> {
    spec.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| EnvError::BadStateSpec(spec.to_string()))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_utterance(env: &Env, rng: &mut ChaCha8Rng) -> Utterance {
        let v = env.vocab().size();
        let toks = (0..env.grammar().len()).map(|_| rng.random_range(1..v) as Token).collect();
        Utterance::new(toks, v).unwrap()
    }

    #[test]
    fn unknown_env_is_rejected() {
        assert_eq!(Env::from_id("blackjack").unwrap_err(), EnvError::UnknownEnv("blackjack".into()));
    }

    #[test]
    fn parse_is_deterministic() {
        for id in Env::IDS {
            let env = Env::from_id(id).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..100_000 {
                let y = random_utterance(&env, &mut rng);
                assert_eq!(env.grammar().parse(&y), env.grammar().parse(&y));
            }
        }
    }

    #[test]
    fn filler_slots_never_affect_parse() {
        // exhaustive over every filler/format position and every token value
        for id in Env::IDS {
            let env = Env::from_id(id).unwrap();
            let g = env.grammar();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            for _ in 0..200 {
                let y = random_utterance(&env, &mut rng);
                let base = g.parse(&y);
                for (i, role) in g.roles().iter().enumerate() {
                    if !matches!(role, SlotRole::Filler | SlotRole::Format) {
                        continue;
                    }
                    for t in 1..env.vocab().size() as Token {
                        let mut toks = y.tokens().to_vec();
                        toks[i] = t;
                        let y2 = Utterance::new(toks, env.vocab().size()).unwrap();
                        assert_eq!(g.parse(&y2), base);
                    }
                }
            }
        }
    }

    #[test]
    fn rewards_bounded_and_episodes_terminate() {
        for id in Env::IDS {
            let env = Env::from_id(id).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            for ep in 0..300 {
                let mut s = env.reset(ep);
                let mut steps = 0;
                while !s.done {
                    let y = random_utterance(&env, &mut rng);
                    let tr = env.step_utterance(&s, &y).unwrap();
                    assert!((REWARD_MIN..=REWARD_MAX).contains(&tr.reward));
                    s = tr.next_state;
                    steps += 1;
                }
                assert!(steps <= env.horizon());
                assert_eq!(env.step(&s, &Action::NOOP), Err(EnvError::EpisodeFinished));
            }
        }
    }

    #[test]
    fn reset_is_reproducible() {
        for id in Env::IDS {
            let env = Env::from_id(id).unwrap();
            for seed in [0, 42, u64::MAX] {
                assert_eq!(env.reset(seed), env.reset(seed));
                assert_eq!(env.reset(seed).step_count, 0);
            }
        }
    }

    #[test]
    fn grammar_filler_fraction_at_least_half() {
        for id in Env::IDS {
            let env = Env::from_id(id).unwrap();
            let g = env.grammar();
            let inert = g.roles().iter().filter(|r| matches!(r, SlotRole::Filler | SlotRole::Format)).count();
            assert!(inert as f64 / g.len() as f64 >= 0.5);
            assert_eq!(g.roles().iter().filter(|r| **r == SlotRole::ActionKind).count(), 1);
        }
    }

    #[test]
    fn utterance_validation() {
        assert_eq!(Utterance::new(vec![2, 0, 3], 16), Err(EnvError::NullToken(1)));
        assert!(matches!(Utterance::new(vec![2, 16], 16), Err(EnvError::TokenOutOfVocab { .. })));
        assert_eq!(Utterance::padded(vec![5], 3, 16).unwrap().tokens(), &[5, EOS, EOS]);
    }

    #[test]
    fn dump_mentions_every_slot() {
        let env = Env::from_id("menunav").unwrap();
        let d = env.dump();
        assert!(d.contains("ActionKind") && d.contains("ActionArg") && d.contains("share"));
    }
}
