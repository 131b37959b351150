use rand::Rng;

use super::{entropy, TabularMdp, TheoryError};

/// Full conditional tables `pi(y_i | y_<i, s)`, one categorical per
/// (state, prefix). Prefix nodes of depth `i` start at `sum_{j<i} m^j`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub num_states: usize,
    pub num_tokens: usize,
    pub n: usize,
    probs: Vec<f64>,
}

impl TabularPolicy {
    pub fn num_nodes(m: usize, n: usize) -> usize {
        (0..n).map(|i| m.pow(i as u32)).sum()
    }

    pub fn depth_offset(&self, depth: usize) -> usize {
        Self::num_nodes(self.num_tokens, depth)
    }

    fn nodes(&self) -> usize {
        Self::num_nodes(self.num_tokens, self.n)
    }

    pub fn uniform(num_states: usize, num_tokens: usize, n: usize) -> Self {
        let len = num_states * Self::num_nodes(num_tokens, n) * num_tokens;
        Self { num_states, num_tokens, n, probs: vec![1.0 / num_tokens as f64; len] }
    }

    pub fn for_mdp_uniform(mdp: &TabularMdp) -> Self {
        Self::uniform(mdp.num_states, mdp.num_tokens, mdp.n)
    }

    /// Softmax of random logits scaled by `sharpness` (large = near-deterministic).
    pub fn random<R: Rng + ?Sized>(rng: &mut R, num_states: usize, num_tokens: usize, n: usize, sharpness: f64) -> Self {
        let mut p = Self::uniform(num_states, num_tokens, n);
        for dist in p.probs.chunks_mut(num_tokens) {
            let logits: Vec<f64> = (0..num_tokens).map(|_| sharpness * rng.random::<f64>()).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - max).exp()).sum();
            for (d, l) in dist.iter_mut().zip(&logits) {
                *d = (l - max).exp() / z;
            }
        }
        p
    }

    /// Every conditional puts all mass on the token chosen by `pick(state, depth, prefix)`.
    pub fn deterministic(num_states: usize, num_tokens: usize, n: usize, pick: impl Fn(usize, usize, usize) -> usize) -> Self {
        let mut p = Self::uniform(num_states, num_tokens, n);
        for s in 0..num_states {
            for depth in 0..n {
                for prefix in 0..num_tokens.pow(depth as u32) {
                    let t = pick(s, depth, prefix);
                    let d = p.node_mut(s, depth, prefix);
                    d.iter_mut().enumerate().for_each(|(k, x)| *x = (k == t) as u8 as f64);
                }
            }
        }
        p
    }

    /// Context-free policy: the same distribution at every prefix of a depth.
    pub fn product(num_states: usize, num_tokens: usize, per_depth: &[Vec<f64>]) -> Self {
        let n = per_depth.len();
        let mut p = Self::uniform(num_states, num_tokens, n);
        for s in 0..num_states {
            for (depth, dist) in per_depth.iter().enumerate() {
                for prefix in 0..num_tokens.pow(depth as u32) {
                    p.node_mut(s, depth, prefix).copy_from_slice(dist);
                }
            }
        }
        p
    }

    fn node_index(&self, s: usize, depth: usize, prefix: usize) -> usize {
        (s * self.nodes() + self.depth_offset(depth) + prefix) * self.num_tokens
    }

    pub fn node(&self, s: usize, depth: usize, prefix: usize) -> &[f64] {
        let i = self.node_index(s, depth, prefix);
        &self.probs[i..i + self.num_tokens]
    }

    pub fn node_mut(&mut self, s: usize, depth: usize, prefix: usize) -> &mut [f64] {
        let i = self.node_index(s, depth, prefix);
        &mut self.probs[i..i + self.num_tokens]
    }

    pub fn check_shape(&self, mdp: &TabularMdp) -> Result<(), TheoryError> {
        if self.num_states != mdp.num_states || self.num_tokens != mdp.num_tokens || self.n != mdp.n {
            return Err(TheoryError::Shape("policy does not match MDP".into()));
        }
        Ok(())
    }

    /// Probability of every prefix of each depth `0..=n` at state `s`.
    pub fn prefix_probs(&self, s: usize) -> Vec<Vec<f64>> {
        let m = self.num_tokens;
        let mut out = vec![vec![1.0]];
        for depth in 0..self.n {
            let prev = &out[depth];
            let mut next = vec![0.0; prev.len() * m];
            for (u, pu) in prev.iter().enumerate() {
                for (t, q) in self.node(s, depth, u).iter().enumerate() {
                    next[u * m + t] = pu * q;
                }
            }
            out.push(next);
        }
        out
    }

    /// Joint probability of every full sequence, lexicographic order.
    pub fn sequence_probs(&self, s: usize) -> Vec<f64> {
        self.prefix_probs(s).pop().expect("depth n exists")
    }

    /// Action distribution induced through the parse table.
    pub fn action_dist(&self, mdp: &TabularMdp, s: usize) -> Vec<f64> {
        let mut out = vec![0.0; mdp.num_actions];
        for (seq, p) in self.sequence_probs(s).iter().enumerate() {
            out[mdp.parse[seq]] += p;
        }
        out
    }

    /// Per-depth conditional entropies `H(y_i | y_<i)` at state `s`.
    pub fn conditional_entropies(&self, s: usize) -> Vec<f64> {
        let pp = self.prefix_probs(s);
        (0..self.n)
            .map(|depth| pp[depth].iter().enumerate().map(|(u, pu)| pu * entropy(self.node(s, depth, u))).sum())
            .collect()
    }

    /// `sum_i B_i H(y_i | y_<i)` by exact enumeration of prefixes.
    pub fn weighted_entropy_exact(&self, s: usize, weights: &[f64]) -> f64 {
        self.conditional_entropies(s).iter().zip(weights).map(|(h, b)| b * h).sum()
    }

    /// Joint sequence entropy vs the sum of conditional entropies.
    pub fn entropy_decomposition_check(&self, s: usize) -> (f64, f64, f64) {
        let joint = entropy(&self.sequence_probs(s));
        let sum: f64 = self.conditional_entropies(s).iter().sum();
        (joint, sum, (joint - sum).abs())
    }

    pub fn max_abs_diff(&self, other: &TabularPolicy) -> f64 {
        self.probs.iter().zip(&other.probs).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_weighted_entropy() {
        let p = TabularPolicy::uniform(1, 3, 2);
        assert!((p.weighted_entropy_exact(0, &[1.0, 1.0]) - 2.0 * 3f64.ln()).abs() < 1e-14);
        assert_eq!(p.weighted_entropy_exact(0, &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn deterministic_has_zero_entropy() {
        let p = TabularPolicy::deterministic(2, 4, 3, |s, d, u| (s + d + u) % 4);
        for s in 0..2 {
            assert!(p.weighted_entropy_exact(s, &[1.0, 2.0, 3.0]).abs() < 1e-12);
            let (joint, sum, diff) = p.entropy_decomposition_check(s);
            assert_eq!((joint, sum, diff), (0.0, 0.0, 0.0));
        }
    }

    #[test]
    fn product_policy_entropy_is_sum_of_marginals() {
        let per_depth = vec![vec![0.2, 0.3, 0.5], vec![0.9, 0.05, 0.05], vec![1.0 / 3.0; 3]];
        let p = TabularPolicy::product(1, 3, &per_depth);
        let (joint, _, diff) = p.entropy_decomposition_check(0);
        let marg: f64 = per_depth.iter().map(|d| entropy(d)).sum();
        assert!((joint - marg).abs() < 1e-12 && diff < 1e-12);
    }

    #[test]
    fn decomposition_holds_for_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            let m = rng.random_range(2..=4);
            let n = rng.random_range(1..=4);
            let sharp = rng.random_range(0.0..8.0);
            let p = TabularPolicy::random(&mut rng, 2, m, n, sharp);
            for s in 0..2 {
                assert!(p.entropy_decomposition_check(s).2 <= 1e-10);
                assert!((p.sequence_probs(s).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
