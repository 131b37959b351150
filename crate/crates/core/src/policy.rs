//! Autoregressive categorical policy `pi(y_i | y_<i, s)`.
//!
//! Logits are linear in a sparse one-hot feature map: state features, the last
//! `K` tokens (NULL pads positions before the start) and the position index.
//! One weight matrix (features x vocab) is shared by every position. NULL is
//! masked before normalization, so it is never sampled.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::textmdp::{Env, EnvState, Token, Utterance, NULL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("prefix of length {got} leaves no position to predict (n = {n})")]
    PrefixTooLong { n: usize, got: usize },
    #[error("token {token} at position {pos} is outside the vocabulary of size {size}")]
    TokenOutOfVocab { pos: usize, token: Token, size: usize },
    #[error("sequence has length {got}, expected {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("dimension mismatch: {0}")]
    Dim(String),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub vocab_size: usize,
    pub n: usize,
    pub feature_cards: Vec<usize>,
    /// Number of previous tokens visible to each position.
    pub context: usize,
}

impl PolicySpec {
    pub fn for_env(env: &Env, context: usize) -> Self {
        Self { vocab_size: env.vocab().size(), n: env.grammar().len(), feature_cards: env.feature_cards(), context }
    }

    fn state_width(&self) -> usize {
        self.feature_cards.iter().sum()
    }

    /// Number of feature rows.
    pub fn dim(&self) -> usize {
        self.state_width() + self.context * self.vocab_size + self.n
    }

    pub fn num_weights(&self) -> usize {
        self.dim() * self.vocab_size
    }

    /// Row offset of the first position feature.
    pub fn position_offset(&self) -> usize {
        self.state_width() + self.context * self.vocab_size
    }

    /// Active feature rows for predicting position `prefix.len()`.
    pub fn active_features(&self, state: &[u8], prefix: &[Token], out: &mut Vec<usize>) {
        out.clear();
        let mut off = 0;
        for (f, card) in state.iter().zip(&self.feature_cards) {
            debug_assert!((*f as usize) < *card);
            out.push(off + *f as usize);
            off += card;
        }
        for j in 0..self.context {
            let t = if prefix.len() > j { prefix[prefix.len() - 1 - j] } else { NULL };
            out.push(off + j * self.vocab_size + t as usize);
        }
        out.push(self.position_offset() + prefix.len());
    }
}

/// A categorical over the vocabulary with NULL mass exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenDist {
    pub probs: Vec<f64>,
    /// `-inf` at NULL.
    pub logprobs: Vec<f64>,
}

impl TokenDist {
    fn from_logits(logits: &[f64]) -> Self {
        let max = logits[1..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits[1..].iter().map(|l| (l - max).exp()).sum();
        let lse = max + z.ln();
        let mut probs = vec![0.0; logits.len()];
        let mut logprobs = vec![f64::NEG_INFINITY; logits.len()];
        for v in 1..logits.len() {
            logprobs[v] = logits[v] - lse;
            probs[v] = logprobs[v].exp();
        }
        Self { probs, logprobs }
    }

    /// Exact entropy in nats.
    pub fn entropy(&self) -> f64 {
        let h: f64 = self.probs.iter().zip(&self.logprobs).skip(1).filter(|(p, _)| **p > 0.0).map(|(p, lp)| -p * lp).sum();
        h.max(0.0)
    }

    /// Lowest-index argmax over non-NULL tokens.
    pub fn argmax(&self) -> Token {
        let mut best = 1;
        for v in 2..self.probs.len() {
            if self.probs[v] > self.probs[best] {
                best = v;
            }
        }
        best as Token
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Token {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 1;
        for v in 1..self.probs.len() {
            if self.probs[v] > 0.0 {
                last = v;
                acc += self.probs[v];
                if u < acc {
                    return v as Token;
                }
            }
        }
        last as Token
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledUtterance {
    pub utterance: Utterance,
    pub logprobs: Vec<f64>,
    /// Exact entropy of each conditional along the sampled prefix.
    pub entropies: Vec<f64>,
}

impl SampledUtterance {
    pub fn total_logprob(&self) -> f64 {
        self.logprobs.iter().sum()
    }
}

/// Per-position distributions and active features along one sequence.
#[derive(Debug, Clone)]
pub struct SeqForward {
    pub features: Vec<Vec<usize>>,
    pub dists: Vec<TokenDist>,
    pub tokens: Vec<Token>,
}

impl SeqForward {
    pub fn logprobs(&self) -> Vec<f64> {
        self.dists.iter().zip(&self.tokens).map(|(d, t)| d.logprobs[*t as usize]).collect()
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.dists.iter().map(TokenDist::entropy).collect()
    }
}

/// Policy weights plus a snapshot version that increments on every update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub spec: PolicySpec,
    pub weights: Vec<f64>,
    pub version: u64,
}

impl PolicyParams {
    pub fn zeros(spec: PolicySpec) -> Self {
        let weights = vec![0.0; spec.num_weights()];
        Self { spec, weights, version: 0 }
    }

    pub fn from_weights(spec: PolicySpec, weights: Vec<f64>) -> Result<Self, PolicyError> {
        if weights.len() != spec.num_weights() {
            return Err(PolicyError::Dim(format!("{} weights for a {}x{} matrix", weights.len(), spec.dim(), spec.vocab_size)));
        }
        Ok(Self { spec, weights, version: 0 })
    }

    pub fn vocab_size(&self) -> usize {
        self.spec.vocab_size
    }

    pub fn n(&self) -> usize {
        self.spec.n
    }

    /// Adds `delta` to the logit of `token` for every prediction at `pos`.
    pub fn bias_position(&mut self, pos: usize, token: Token, delta: f64) {
        let row = self.spec.position_offset() + pos;
        self.weights[row * self.spec.vocab_size + token as usize] += delta;
    }

    fn logits(&self, feats: &[usize]) -> Vec<f64> {
        let v = self.spec.vocab_size;
        let mut logits = vec![0.0; v];
        for &f in feats {
            let row = &self.weights[f * v..(f + 1) * v];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += w;
            }
        }
        logits[NULL as usize] = f64::NEG_INFINITY;
        logits
    }

    fn check_state(&self, state: &[u8]) -> Result<(), PolicyError> {
        if state.len() != self.spec.feature_cards.len() {
            return Err(PolicyError::Dim(format!("{} state features, expected {}", state.len(), self.spec.feature_cards.len())));
        }
        for (f, card) in state.iter().zip(&self.spec.feature_cards) {
            if *f as usize >= *card {
                return Err(PolicyError::Dim(format!("state feature {f} outside cardinality {card}")));
            }
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[Token]) -> Result<(), PolicyError> {
        for (pos, &t) in tokens.iter().enumerate() {
            if t == NULL || t as usize >= self.spec.vocab_size {
                return Err(PolicyError::TokenOutOfVocab { pos, token: t, size: self.spec.vocab_size });
            }
        }
        Ok(())
    }

    pub fn next_token_dist(&self, state: &EnvState, prefix: &[Token]) -> Result<TokenDist, PolicyError> {
        self.next_token_dist_raw(&state.features, prefix)
    }

    pub fn next_token_dist_raw(&self, state: &[u8], prefix: &[Token]) -> Result<TokenDist, PolicyError> {
        if prefix.len() >= self.spec.n {
            return Err(PolicyError::PrefixTooLong { n: self.spec.n, got: prefix.len() });
        }
        self.check_state(state)?;
        self.check_tokens(prefix)?;
        let mut feats = Vec::new();
        self.spec.active_features(state, prefix, &mut feats);
        Ok(TokenDist::from_logits(&self.logits(&feats)))
    }

    pub fn sample_utterance<R: Rng + ?Sized>(&self, state: &EnvState, rng: &mut R) -> Result<SampledUtterance, PolicyError> {
        self.check_state(&state.features)?;
        let n = self.spec.n;
        let mut tokens = Vec::with_capacity(n);
        let mut logprobs = Vec::with_capacity(n);
        let mut entropies = Vec::with_capacity(n);
        let mut feats = Vec::new();
        for _ in 0..n {
            self.spec.active_features(&state.features, &tokens, &mut feats);
            let d = TokenDist::from_logits(&self.logits(&feats));
            let t = d.sample(rng);
            logprobs.push(d.logprobs[t as usize]);
            entropies.push(d.entropy());
            tokens.push(t);
        }
        let utterance = Utterance::new(tokens, self.spec.vocab_size).expect("policy never emits NULL");
        Ok(SampledUtterance { utterance, logprobs, entropies })
    }

    /// Per-position argmax decoding.
    pub fn greedy_utterance(&self, state: &EnvState) -> Result<SampledUtterance, PolicyError> {
        self.check_state(&state.features)?;
        let mut tokens = Vec::with_capacity(self.spec.n);
        let mut logprobs = Vec::new();
        let mut entropies = Vec::new();
        let mut feats = Vec::new();
        for _ in 0..self.spec.n {
            self.spec.active_features(&state.features, &tokens, &mut feats);
            let d = TokenDist::from_logits(&self.logits(&feats));
            let t = d.argmax();
            logprobs.push(d.logprobs[t as usize]);
            entropies.push(d.entropy());
            tokens.push(t);
        }
        let utterance = Utterance::new(tokens, self.spec.vocab_size).expect("policy never emits NULL");
        Ok(SampledUtterance { utterance, logprobs, entropies })
    }

    /// Teacher-forced forward pass along `tokens`.
    pub fn forward(&self, state: &[u8], tokens: &[Token]) -> Result<SeqForward, PolicyError> {
        if tokens.len() != self.spec.n {
            return Err(PolicyError::LengthMismatch { expected: self.spec.n, got: tokens.len() });
        }
        self.check_state(state)?;
        self.check_tokens(tokens)?;
        let mut features = Vec::with_capacity(tokens.len());
        let mut dists = Vec::with_capacity(tokens.len());
        for i in 0..tokens.len() {
            let mut feats = Vec::new();
            self.spec.active_features(state, &tokens[..i], &mut feats);
            dists.push(TokenDist::from_logits(&self.logits(&feats)));
            features.push(feats);
        }
        Ok(SeqForward { features, dists, tokens: tokens.to_vec() })
    }

    /// Per-token log-probabilities and exact conditional entropies of `y`.
    pub fn logprob_and_entropy(&self, state: &EnvState, y: &Utterance) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
        let fwd = self.forward(&state.features, y.tokens())?;
        Ok((fwd.logprobs(), fwd.entropies()))
    }

    /// Adds the gradient of `lp_coef * sum_i log p_i + sum_i ent_coefs[i] * H_i`
    /// with respect to the weights into `grad`.
    pub fn backward(&self, fwd: &SeqForward, lp_coef: f64, ent_coefs: &[f64], grad: &mut [f64]) {
        let v = self.spec.vocab_size;
        let mut dlogits = vec![0.0; v];
        for (i, (feats, d)) in fwd.features.iter().zip(&fwd.dists).enumerate() {
            let ec = ent_coefs.get(i).copied().unwrap_or(0.0);
            if lp_coef == 0.0 && ec == 0.0 {
                continue;
            }
            let h = if ec != 0.0 { d.entropy() } else { 0.0 };
            let y = fwd.tokens[i] as usize;
            dlogits[0] = 0.0;
            for k in 1..v {
                let p = d.probs[k];
                let mut g = 0.0;
                if lp_coef != 0.0 {
                    g += lp_coef * ((k == y) as u8 as f64 - p);
                }
                if ec != 0.0 && p > 0.0 {
                    // dH/dz_k = -p_k (log p_k + H)
                    g += ec * (-p * (d.logprobs[k] + h));
                }
                dlogits[k] = g;
            }
            for &f in feats {
                for (gw, dl) in grad[f * v..(f + 1) * v].iter_mut().zip(&dlogits) {
                    *gw += dl;
                }
            }
        }
    }
}

/// One (state, utterance) pair for batch objectives.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSeq {
    pub state: Vec<u8>,
    pub tokens: Vec<Token>,
}

/// Objectives with analytic gradients. All are maximized.
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    /// `sum_b c_b * sum_i log p(y_b^i | ...)`
    LogProbWeighted(&'a [f64]),
    /// `sum_b sum_i H_b^i`
    Entropy,
    /// `sum_b sum_i B_b^i * H_b^i`
    WeightedEntropy(&'a [Vec<f64>]),
}

impl Objective<'_> {
    fn check(&self, len: usize, n: usize) -> Result<(), PolicyError> {
        match self {
            Objective::LogProbWeighted(c) if c.len() != len => {
                Err(PolicyError::Dim(format!("{} coefficients for {len} sequences", c.len())))
            }
            Objective::WeightedEntropy(w) if w.len() != len => {
                Err(PolicyError::Dim(format!("{} weight vectors for {len} sequences", w.len())))
            }
            Objective::WeightedEntropy(w) if w.iter().any(|b| b.len() != n) => {
                Err(PolicyError::Dim(format!("weight vectors must have length {n}")))
            }
            _ => Ok(()),
        }
    }

    fn coefs(&self, b: usize, n: usize) -> (f64, Vec<f64>) {
        match self {
            Objective::LogProbWeighted(c) => (c[b], Vec::new()),
            Objective::Entropy => (0.0, vec![1.0; n]),
            Objective::WeightedEntropy(w) => (0.0, w[b].clone()),
        }
    }
}

/// Sequences per gradient chunk. Fixed so reductions are thread-count independent.
pub const GRAD_CHUNK: usize = 32;

impl PolicyParams {
    pub fn objective_value(&self, batch: &[ScoredSeq], obj: Objective<'_>) -> Result<f64, PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        obj.check(batch.len(), self.spec.n)?;
        let mut total = 0.0;
        for (b, s) in batch.iter().enumerate() {
            let fwd = self.forward(&s.state, &s.tokens)?;
            let (lc, ec) = obj.coefs(b, self.spec.n);
            total += lc * fwd.logprobs().iter().sum::<f64>();
            total += ec.iter().zip(fwd.entropies()).map(|(c, h)| c * h).sum::<f64>();
        }
        Ok(total)
    }

    pub fn grad_objective(&self, batch: &[ScoredSeq], obj: Objective<'_>) -> Result<Vec<f64>, PolicyError> {
        if batch.is_empty() {
            return Err(PolicyError::EmptyBatch);
        }
        obj.check(batch.len(), self.spec.n)?;
        for s in batch {
            self.check_state(&s.state)?;
            if s.tokens.len() != self.spec.n {
                return Err(PolicyError::LengthMismatch { expected: self.spec.n, got: s.tokens.len() });
            }
            self.check_tokens(&s.tokens)?;
        }
        let idx: Vec<usize> = (0..batch.len()).collect();
        let n = self.spec.n;
        let partials = par::map_chunks(&idx, GRAD_CHUNK, |chunk| {
            let mut g = vec![0.0; self.weights.len()];
            for &b in chunk {
                let fwd = self.forward(&batch[b].state, &batch[b].tokens).expect("validated above");
                let (lc, ec) = obj.coefs(b, n);
                self.backward(&fwd, lc, &ec, &mut g);
            }
            g
        });
        Ok(sum_ordered(partials, self.weights.len()))
    }
}

/// Sums partial gradients in order.
pub fn sum_ordered(partials: Vec<Vec<f64>>, len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for p in partials {
        for (o, x) in out.iter_mut().zip(p) {
            *o += x;
        }
    }
    out
}
