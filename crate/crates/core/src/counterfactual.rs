//! Nullification interventions and per-token causal weights.
//!
//! For an utterance `y` with parsed action `a`, the raw weight of position `i`
//! is `|P(a | y) - P(a | y with y_i := NULL)|` under the surrogate model.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::par;
use crate::scm::{Scm, ScmError};
use crate::textmdp::{Token, NULL};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterfactualError {
    #[error("position {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Scm(#[from] ScmError),
    #[error("empty batch")]
    EmptyBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightMode {
    Raw,
    Maxnorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizeOpts {
    /// Below this max raw weight, the vector is treated as all-zero.
    pub eps: f64,
    pub floor: f64,
}

impl Default for NormalizeOpts {
    fn default() -> Self {
        Self { eps: 1e-6, floor: 0.01 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalWeights {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    pub mode: WeightMode,
}

impl CausalWeights {
    /// The vector consumed by the objective for this mode.
    pub fn effective(&self) -> &[f64] {
        match self.mode {
            WeightMode::Raw => &self.raw,
            WeightMode::Maxnorm => &self.normalized,
        }
    }

    /// Uniform weights (used by the naive-entropy arm).
    pub fn ones(n: usize) -> Self {
        Self { raw: vec![1.0; n], normalized: vec![1.0; n], mode: WeightMode::Raw }
    }
}

/// Copy of `y` with position `i` replaced by NULL.
pub fn nullify(y: &[Token], i: usize) -> Result<Vec<Token>, CounterfactualError> {
    if i >= y.len() {
        return Err(CounterfactualError::IndexOutOfRange { index: i, len: y.len() });
    }
    let mut out = y.to_vec();
    out[i] = NULL;
    Ok(out)
}

/// Raw causal weights of every position of `y` toward action class `a`.
///
/// Uses exactly `n + 1` likelihood evaluations: the factual sequence and one
/// intervention per position.
pub fn causal_weights(scm: &Scm, y: &[Token], a: usize) -> Result<CausalWeights, CounterfactualError> {
    let mut seqs = Vec::with_capacity(y.len() + 1);
    seqs.push(y.to_vec());
    for i in 0..y.len() {
        seqs.push(nullify(y, i)?);
    }
    let lik = scm.likelihood_batch(&seqs)?;
    if a >= scm.classes {
        return Err(ScmError::Label { label: a, classes: scm.classes }.into());
    }
    let base = lik[0].probs[a];
    let raw: Vec<f64> = lik[1..].iter().map(|l| (base - l.probs[a]).abs()).collect();
    Ok(CausalWeights { normalized: raw.clone(), raw, mode: WeightMode::Raw })
}

/// Raw weights for a batch of (utterance, action class) pairs, in input order.
pub fn causal_weights_batch(scm: &Scm, items: &[(Vec<Token>, usize)]) -> Result<Vec<CausalWeights>, CounterfactualError> {
    par::map_slice(items, |(y, a)| causal_weights(scm, y, *a)).into_iter().collect()
}

/// Sequential reference of [`causal_weights_batch`].
pub fn causal_weights_batch_seq(scm: &Scm, items: &[(Vec<Token>, usize)]) -> Result<Vec<CausalWeights>, CounterfactualError> {
    par::map_slice_seq(items, |(y, a)| causal_weights(scm, y, *a)).into_iter().collect()
}

pub fn normalize_weights(w: &CausalWeights, mode: WeightMode, opts: NormalizeOpts) -> CausalWeights {
    match mode {
        WeightMode::Raw => CausalWeights { raw: w.raw.clone(), normalized: w.raw.clone(), mode },
        WeightMode::Maxnorm => {
            let max = w.raw.iter().copied().fold(0.0, f64::max);
            let normalized = if max > opts.eps {
                w.raw.iter().map(|r| (r / max).max(opts.floor)).collect()
            } else {
                vec![opts.floor; w.raw.len()]
            };
            CausalWeights { raw: w.raw.clone(), normalized, mode }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub fractions: Vec<f64>,
}

impl WeightHistogram {
    pub const DEFAULT_EDGES: [f64; 6] = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0];

    /// Fraction of weights in the first bin, `[0, 0.2)` by default.
    pub fn low_fraction(&self) -> f64 {
        self.fractions[0]
    }
}

/// Histogram of normalized weights over all positions of all sequences.
/// Bins are half-open except the last, which includes its upper edge.
pub fn weight_stats(batch: &[CausalWeights]) -> Result<WeightHistogram, CounterfactualError> {
    weight_stats_with_edges(batch, &WeightHistogram::DEFAULT_EDGES)
}

pub fn weight_stats_with_edges(batch: &[CausalWeights], edges: &[f64]) -> Result<WeightHistogram, CounterfactualError> {
    if batch.is_empty() {
        return Err(CounterfactualError::EmptyBatch);
    }
    let bins = edges.len() - 1;
    let mut counts = vec![0u64; bins];
    for w in batch {
        for &x in &w.normalized {
            let mut b = edges.partition_point(|e| *e <= x).saturating_sub(1);
            if b >= bins {
                b = bins - 1;
            }
            counts[b] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    let fractions = counts.iter().map(|c| *c as f64 / total.max(1) as f64).collect();
    Ok(WeightHistogram { edges: edges.to_vec(), counts, fractions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn maxnorm(raw: Vec<f64>) -> CausalWeights {
        let w = CausalWeights { normalized: raw.clone(), raw, mode: WeightMode::Raw };
        normalize_weights(&w, WeightMode::Maxnorm, NormalizeOpts::default())
    }

    #[test]
    fn nullify_replaces_one_position() {
        let y = vec![5, 3, 9];
        assert_eq!(nullify(&y, 1).unwrap(), vec![5, NULL, 9]);
        assert_eq!(y, vec![5, 3, 9]);
        let mut restored = nullify(&y, 1).unwrap();
        restored[1] = y[1];
        assert_eq!(restored, y);
        assert_eq!(nullify(&y, 3), Err(CounterfactualError::IndexOutOfRange { index: 3, len: 3 }));
    }

    #[test]
    fn uniform_scm_gives_zero_weights_with_n_plus_one_evals() {
        let scm = Scm::new(3, 16, 3, 1e-3);
        let before = scm.eval_count();
        let w = causal_weights(&scm, &[5, 6, 2], 1).unwrap();
        assert_eq!(w.raw, vec![0.0; 3]);
        assert_eq!(scm.eval_count() - before, 4);
    }

    #[test]
    fn maxnorm_examples() {
        assert_eq!(maxnorm(vec![0.0, 0.0, 0.5]).normalized, vec![0.01, 0.01, 1.0]);
        assert_eq!(maxnorm(vec![0.0; 4]).normalized, vec![0.01; 4]);
        let once = maxnorm(vec![0.1, 0.3, 0.2]);
        let twice = normalize_weights(
            &CausalWeights { raw: once.normalized.clone(), normalized: once.normalized.clone(), mode: WeightMode::Raw },
            WeightMode::Maxnorm,
            NormalizeOpts::default(),
        );
        assert_eq!(once.normalized, twice.normalized);
    }

    #[test]
    fn histogram_counts() {
        let h = weight_stats(&[maxnorm(vec![0.0, 0.0, 0.5])]).unwrap();
        assert!((h.low_fraction() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(h.counts, vec![2, 0, 0, 0, 1]);
        assert_eq!(weight_stats(&[]), Err(CounterfactualError::EmptyBatch));
    }

    proptest! {
        #[test]
        fn histogram_fractions_sum_to_one(raws in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 1..8), 1..20)) {
            let batch: Vec<_> = raws.into_iter().map(maxnorm).collect();
            let h = weight_stats(&batch).unwrap();
            prop_assert!((h.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn maxnorm_bounds(raw in prop::collection::vec(0.0f64..1.0, 1..10)) {
            let w = maxnorm(raw.clone());
            prop_assert!(w.normalized.iter().all(|x| (0.01..=1.0).contains(x)));
            if raw.iter().any(|r| *r > 1e-6) {
                prop_assert_eq!(w.normalized.iter().copied().fold(0.0, f64::max), 1.0);
            }
        }
    }
}
