use rand::Rng;

use super::TheoryError;

/// Finite MDP whose actions come from parsing length-`n` sequences over `m`
/// tokens (NULL excluded; tokens are indexed `0..m`).
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub num_states: usize,
    pub num_tokens: usize,
    pub n: usize,
    pub num_actions: usize,
    /// Action of each sequence, sequences in lexicographic order.
    pub parse: Vec<usize>,
    /// `P(s' | s, a)` at `[(s * A + a) * S + s']`.
    pub transitions: Vec<f64>,
    /// `r(s, a)` at `[s * A + a]`.
    pub rewards: Vec<f64>,
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomMdpSpec {
    pub max_states: usize,
    pub max_tokens: usize,
    pub max_len: usize,
    pub max_actions: usize,
    pub gamma_range: (f64, f64),
    pub reward_range: (f64, f64),
}

impl Default for RandomMdpSpec {
    fn default() -> Self {
        Self {
            max_states: 6,
            max_tokens: 3,
            max_len: 3,
            max_actions: 4,
            gamma_range: (0.5, 0.95),
            reward_range: (-1.0, 1.0),
        }
    }
}

impl TabularMdp {
    pub fn num_sequences(&self) -> usize {
        self.num_tokens.pow(self.n as u32)
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.num_actions + a) * self.num_states + s2]
    }

    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.num_actions + a]
    }

    pub fn reward_bounds(&self) -> (f64, f64) {
        let lo = self.rewards.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let (s, a) = (self.num_states, self.num_actions);
        if self.parse.len() != self.num_sequences() || self.parse.iter().any(|x| *x >= a) {
            return Err(TheoryError::Shape("parse table".into()));
        }
        if self.transitions.len() != s * a * s || self.rewards.len() != s * a {
            return Err(TheoryError::Shape("transition or reward table".into()));
        }
        for row in self.transitions.chunks(s) {
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(TheoryError::Shape("transition row is not a simplex".into()));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(TheoryError::Shape("gamma".into()));
        }
        Ok(())
    }

    /// Random instance; the parse table is surjective onto the action set.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, spec: &RandomMdpSpec) -> Self {
        let num_states = rng.random_range(2..=spec.max_states.max(2));
        let num_tokens = rng.random_range(2..=spec.max_tokens.max(2));
        let n = rng.random_range(1..=spec.max_len.max(1));
        let seqs = num_tokens.pow(n as u32);
        let num_actions = rng.random_range(2..=spec.max_actions.max(2)).min(seqs);
        Self::random_shaped(rng, num_states, num_tokens, n, num_actions, spec)
    }

    pub fn random_shaped<R: Rng + ?Sized>(
        rng: &mut R,
        num_states: usize,
        num_tokens: usize,
        n: usize,
        num_actions: usize,
        spec: &RandomMdpSpec,
    ) -> Self {
        let seqs = num_tokens.pow(n as u32);
        assert!(num_actions <= seqs);
        let mut parse: Vec<usize> = (0..seqs).map(|i| if i < num_actions { i } else { rng.random_range(0..num_actions) }).collect();
        // shuffle so the surjective prefix is not always the lexicographic start
        for i in (1..parse.len()).rev() {
            let j = rng.random_range(0..=i);
            parse.swap(i, j);
        }
        let mut transitions = Vec::with_capacity(num_states * num_actions * num_states);
        for _ in 0..num_states * num_actions {
            let mut row: Vec<f64> =
                (0..num_states).map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() }).collect();
            if row.iter().all(|x| *x == 0.0) {
                row[rng.random_range(0..num_states)] = 1.0;
            }
            let z: f64 = row.iter().sum();
            transitions.extend(row.into_iter().map(|x| x / z));
        }
        let (lo, hi) = spec.reward_range;
        let rewards = (0..num_states * num_actions).map(|_| rng.random_range(lo..=hi)).collect();
        let gamma = rng.random_range(spec.gamma_range.0..=spec.gamma_range.1);
        Self { num_states, num_tokens, n, num_actions, parse, transitions, rewards, gamma }
    }
}
