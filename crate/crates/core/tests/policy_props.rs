mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use coso::policy::{PolicyParams, PolicySpec};
use coso::textmdp::{EnvState, Token};

fn random_policy(seed: u64, vocab: usize, n: usize, scale: f64) -> PolicyParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spec = PolicySpec { vocab_size: vocab, n, feature_cards: vec![3, 2], context: 3 };
    let w = (0..spec.num_weights()).map(|_| rng.random_range(-scale..scale)).collect();
    PolicyParams::from_weights(spec, w).unwrap()
}

fn state(features: Vec<u8>) -> EnvState {
    EnvState { features, step_count: 0, done: false }
}

/// Every sequence over the non-NULL tokens, lexicographic.
fn all_sequences(vocab: usize, n: usize) -> Vec<Vec<Token>> {
    let m = vocab - 1;
    (0..m.pow(n as u32))
        .map(|mut k| {
            let mut y = vec![0; n];
            for i in (0..n).rev() {
                y[i] = (k % m) as Token + 1;
                k /= m;
            }
            y
        })
        .collect()
}

#[test]
fn per_token_entropies_sum_to_brute_force_joint_entropy() {
    for seed in 0..20 {
        let vocab = 4 + (seed as usize % 2);
        let n = 1 + seed as usize % 4;
        let p = random_policy(seed, vocab, n, 3.0);
        let s = vec![1, 0];
        let seqs = all_sequences(vocab, n);
        let mut joint = 0.0;
        let mut total = 0.0;
        for y in &seqs {
            let lp: f64 = p.forward(&s, y).unwrap().logprobs().iter().sum();
            joint -= lp.exp() * lp;
            total += lp.exp();
        }
        // E_y[sum_i H(y_i | y_<i)] is the sum of conditional entropies
        let mut cond = 0.0;
        for y in &seqs {
            let fwd = p.forward(&s, y).unwrap();
            let lp: f64 = fwd.logprobs().iter().sum();
            cond += lp.exp() * fwd.entropies().iter().sum::<f64>();
        }
        assert!((total - 1.0).abs() < 1e-12);
        assert!((joint - cond).abs() <= 1e-10, "seed {seed}: joint {joint} vs {cond}");
    }
}

fn chi_square_pvalue(counts: &[u64], probs: &[f64]) -> f64 {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut dof = 0usize;
    for (c, p) in counts.iter().zip(probs) {
        if *p > 0.0 {
            let e = p * total as f64;
            stat += (*c as f64 - e).powi(2) / e;
            dof += 1;
        } else {
            assert_eq!(*c, 0, "sampled a zero-probability token");
        }
    }
    1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn first_token_frequencies_match_within_three_sigma_and_chi_square() {
    let p = random_policy(7, 16, 3, 1.0);
    let st = state(vec![2, 1]);
    let dist = p.next_token_dist(&st, &[]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let draws = 100_000;
    let mut counts = vec![0u64; 16];
    for _ in 0..draws {
        counts[p.sample_utterance(&st, &mut rng).unwrap().utterance.tokens()[0] as usize] += 1;
    }
    assert_eq!(counts[0], 0);
    for (c, q) in counts.iter().zip(&dist.probs) {
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        assert!((*c as f64 - draws as f64 * q).abs() <= 3.0 * sigma + 1e-9, "count {c} vs prob {q}");
    }
    assert!(chi_square_pvalue(&counts, &dist.probs) > 1e-3);
}

#[test]
fn conditional_frequencies_pass_chi_square() {
    let p = random_policy(8, 6, 2, 1.5);
    let st = state(vec![0, 1]);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut counts = vec![vec![0u64; 6]; 6];
    for _ in 0..100_000 {
        let y = p.sample_utterance(&st, &mut rng).unwrap();
        let t = y.utterance.tokens();
        counts[t[0] as usize][t[1] as usize] += 1;
    }
    for first in 1..6u16 {
        let c = &counts[first as usize];
        if c.iter().sum::<u64>() < 1000 {
            continue;
        }
        let dist = p.next_token_dist(&st, &[first]).unwrap();
        assert!(chi_square_pvalue(c, &dist.probs) > 1e-3, "prefix {first}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distributions_normalized_and_entropy_bounded(seed in any::<u64>(), scale in 0.0f64..20.0, vocab in 3usize..20) {
        let p = random_policy(seed, vocab, 3, scale);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let st = state(vec![rng.random_range(0..3), rng.random_range(0..2)]);
        let y = p.sample_utterance(&st, &mut rng).unwrap();
        let toks = y.utterance.tokens();
        for i in 0..3 {
            let d = p.next_token_dist(&st, &toks[..i]).unwrap();
            prop_assert!((d.probs.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert_eq!(d.probs[0], 0.0);
            let h = d.entropy();
            prop_assert!(h >= 0.0 && h <= ((vocab - 1) as f64).ln() + 1e-12);
        }
        // re-scoring reproduces the sampled quantities exactly
        let (lp, ent) = p.logprob_and_entropy(&st, &y.utterance).unwrap();
        prop_assert_eq!(lp, y.logprobs);
        prop_assert_eq!(ent, y.entropies);
    }
}
