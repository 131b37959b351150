//! Surrogate causal model `P_phi(a | y)`: a linear softmax classifier over
//! (position, token) one-hots, trained online by cross-entropy to imitate the
//! parser. NULL has its own feature column at every position, so nullified
//! utterances are in-domain.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::Adam;
use crate::textmdp::Token;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScmError {
    #[error("sequence has length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
    #[error("token {token} outside vocabulary of size {size}")]
    Token { token: Token, size: usize },
    #[error("label {label} outside {classes} classes")]
    Label { label: usize, classes: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("parameter vector has length {got}, expected {expected}")]
    Params { expected: usize, got: usize },
}

/// Probabilities over the environment's action classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionLikelihood {
    pub probs: Vec<f64>,
}

impl ActionLikelihood {
    /// Lowest-index argmax.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (c, p) in self.probs.iter().enumerate() {
            if *p > self.probs[best] {
                best = c;
            }
        }
        best
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Scm {
    pub n: usize,
    pub vocab_size: usize,
    pub classes: usize,
    /// `n * vocab * classes` weights followed by `classes` biases.
    params: Vec<f64>,
    opt: Adam,
    #[serde(skip)]
    evals: AtomicU64,
}

impl Clone for Scm {
    fn clone(&self) -> Self {
        Self {
            n: self.n,
            vocab_size: self.vocab_size,
            classes: self.classes,
            params: self.params.clone(),
            opt: self.opt.clone(),
            evals: AtomicU64::new(self.evals.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for Scm {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.vocab_size == other.vocab_size && self.classes == other.classes && self.params == other.params
    }
}

impl Scm {
    pub fn new(n: usize, vocab_size: usize, classes: usize, lr: f64) -> Self {
        let len = n * vocab_size * classes + classes;
        Self { n, vocab_size, classes, params: vec![0.0; len], opt: Adam::new(len, lr), evals: AtomicU64::new(0) }
    }

    pub fn from_params(n: usize, vocab_size: usize, classes: usize, lr: f64, params: Vec<f64>) -> Result<Self, ScmError> {
        let mut s = Self::new(n, vocab_size, classes, lr);
        if params.len() != s.params.len() {
            return Err(ScmError::Params { expected: s.params.len(), got: params.len() });
        }
        s.params = params;
        Ok(s)
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn lr(&self) -> f64 {
        self.opt.lr
    }

    pub fn steps_taken(&self) -> u64 {
        self.opt.step_count
    }

    /// Number of likelihood evaluations since construction.
    pub fn eval_count(&self) -> u64 {
        self.evals.load(Ordering::Relaxed)
    }

    fn bias_offset(&self) -> usize {
        self.n * self.vocab_size * self.classes
    }

    fn check(&self, y: &[Token]) -> Result<(), ScmError> {
        if y.len() != self.n {
            return Err(ScmError::Length { expected: self.n, got: y.len() });
        }
        if let Some(&t) = y.iter().find(|t| **t as usize >= self.vocab_size) {
            return Err(ScmError::Token { token: t, size: self.vocab_size });
        }
        Ok(())
    }

    fn logits(&self, y: &[Token]) -> Vec<f64> {
        let c = self.classes;
        let mut logits = self.params[self.bias_offset()..].to_vec();
        for (i, &t) in y.iter().enumerate() {
            let row = (i * self.vocab_size + t as usize) * c;
            for (l, w) in logits.iter_mut().zip(&self.params[row..row + c]) {
                *l += w;
            }
        }
        logits
    }

    fn softmax(logits: &[f64]) -> Vec<f64> {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// `P_phi(. | y)`. NULL tokens are allowed.
    pub fn likelihood(&self, y: &[Token]) -> Result<ActionLikelihood, ScmError> {
        self.check(y)?;
        self.evals.fetch_add(1, Ordering::Relaxed);
        Ok(ActionLikelihood { probs: Self::softmax(&self.logits(y)) })
    }

    pub fn likelihood_batch(&self, ys: &[Vec<Token>]) -> Result<Vec<ActionLikelihood>, ScmError> {
        ys.iter().map(|y| self.likelihood(y)).collect()
    }

    /// Argmax class, ties to the lowest index.
    pub fn predict(&self, y: &[Token]) -> Result<usize, ScmError> {
        Ok(self.likelihood(y)?.argmax())
    }

    /// Mean cross-entropy of the batch under the current parameters.
    pub fn loss(&self, batch: &[(Vec<Token>, usize)]) -> Result<f64, ScmError> {
        if batch.is_empty() {
            return Err(ScmError::EmptyBatch);
        }
        let mut total = 0.0;
        for (y, a) in batch {
            self.check(y)?;
            if *a >= self.classes {
                return Err(ScmError::Label { label: *a, classes: self.classes });
            }
            let logits = self.logits(y);
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
            total += lse - logits[*a];
        }
        Ok(total / batch.len() as f64)
    }

    /// One Adam step on the mean cross-entropy of `batch`. Returns the loss
    /// before the step.
    pub fn update(&mut self, batch: &[(Vec<Token>, usize)]) -> Result<f64, ScmError> {
        if batch.is_empty() {
            return Err(ScmError::EmptyBatch);
        }
        let c = self.classes;
        let bias = self.bias_offset();
        let mut grad = vec![0.0; self.params.len()];
        let mut total = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for (y, a) in batch {
            self.check(y)?;
            if *a >= c {
                return Err(ScmError::Label { label: *a, classes: c });
            }
            let logits = self.logits(y);
            let p = Self::softmax(&logits);
            total += -p[*a].max(f64::MIN_POSITIVE).ln();
            let d: Vec<f64> = (0..c).map(|k| scale * (p[k] - (k == *a) as u8 as f64)).collect();
            for (i, &t) in y.iter().enumerate() {
                let row = (i * self.vocab_size + t as usize) * c;
                for (g, dk) in grad[row..row + c].iter_mut().zip(&d) {
                    *g += dk;
                }
            }
            for (g, dk) in grad[bias..].iter_mut().zip(&d) {
                *g += dk;
            }
        }
        self.opt.descend(&mut self.params, &grad);
        Ok(total * scale)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_params_uniform_and_tie_break() {
        let s = Scm::new(3, 16, 3, 1e-3);
        let l = s.likelihood(&[5, 6, 2]).unwrap();
        for p in &l.probs {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!((l.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(s.predict(&[5, 6, 2]).unwrap(), 0);
        let loss = s.loss(&[(vec![5, 6, 2], 1)]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn first_update_reports_uniform_loss() {
        let mut s = Scm::new(3, 16, 3, 1e-3);
        let loss = s.update(&[(vec![5, 6, 2], 1), (vec![7, 7, 3], 2)]).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn overfits_single_example() {
        let mut s = Scm::new(3, 16, 3, 1e-2);
        let batch = vec![(vec![5, 6, 2], 1)];
        for _ in 0..1000 {
            s.update(&batch).unwrap();
        }
        assert!(s.loss(&batch).unwrap() <= 0.01);
    }

    #[test]
    fn shift_invariance_of_prediction() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params: Vec<f64> = (0..3 * 8 * 4 + 4).map(|_| rng.random::<f64>() - 0.5).collect();
        let a = Scm::from_params(3, 8, 4, 1e-3, params.clone()).unwrap();
        let mut shifted = params;
        let off = 3 * 8 * 4;
        for b in &mut shifted[off..] {
            *b += 7.25;
        }
        let b = Scm::from_params(3, 8, 4, 1e-3, shifted).unwrap();
        for _ in 0..200 {
            let y: Vec<Token> = (0..3).map(|_| rng.random_range(0..8)).collect();
            assert_eq!(a.predict(&y).unwrap(), b.predict(&y).unwrap());
        }
    }

    #[test]
    fn null_inputs_are_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let params: Vec<f64> = (0..4 * 8 * 3 + 3).map(|_| 5.0 * (rng.random::<f64>() - 0.5)).collect();
        let s = Scm::from_params(4, 8, 3, 1e-3, params).unwrap();
        for mask in 0u32..16 {
            let y: Vec<Token> = (0..4).map(|i| if mask >> i & 1 == 1 { 0 } else { 3 }).collect();
            assert!(s.likelihood(&y).unwrap().probs.iter().all(|p| p.is_finite()));
        }
    }

    #[test]
    fn errors() {
        let mut s = Scm::new(3, 16, 3, 1e-3);
        assert_eq!(s.update(&[]), Err(ScmError::EmptyBatch));
        assert!(matches!(s.likelihood(&[1, 2]), Err(ScmError::Length { .. })));
        assert!(matches!(s.likelihood(&[1, 2, 16]), Err(ScmError::Token { .. })));
        assert!(matches!(s.update(&[(vec![1, 2, 3], 3)]), Err(ScmError::Label { .. })));
    }

    #[test]
    fn loss_stays_finite_under_fuzz() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut s = Scm::new(4, 12, 5, 1e-1);
        for _ in 0..10_000 {
            let batch: Vec<(Vec<Token>, usize)> = (0..4)
                .map(|_| ((0..4).map(|_| rng.random_range(0..12)).collect(), rng.random_range(0..5)))
                .collect();
            let l = s.update(&batch).unwrap();
            assert!(l.is_finite() && l >= 0.0);
        }
    }
}
