use super::{entropy, evaluate_exact, QTable, TabularMdp, TabularPolicy, TheoryError};

/// `E_{a~pi}[Q(s,a)] + alpha * H^B(pi(.|s))`.
pub fn state_objective(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    s: usize,
    q: &QTable,
    weights: &[f64],
    alpha: f64,
) -> f64 {
    let value: f64 = policy.action_dist(mdp, s).iter().zip(q.row(s)).map(|(p, x)| p * x).sum();
    if alpha == 0.0 {
        value
    } else {
        value + alpha * policy.weighted_entropy_exact(s, weights)
    }
}

fn node_value(q: &[f64], children: &[f64], temp: f64) -> f64 {
    let lin: f64 = q.iter().zip(children).map(|(p, c)| p * c).sum();
    if temp == 0.0 {
        lin
    } else {
        lin + temp * entropy(q)
    }
}

/// Maximizer of `sum_t q_t c_t + temp * H(q)` over the simplex.
fn best_response(children: &[f64], temp: f64) -> Vec<f64> {
    if temp == 0.0 {
        let mut best = 0;
        for (t, c) in children.iter().enumerate() {
            if *c > children[best] {
                best = t;
            }
        }
        return (0..children.len()).map(|t| (t == best) as u8 as f64).collect();
    }
    let max = children.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = children.iter().map(|c| ((c - max) / temp).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|x| x / z).collect()
}

/// Coordinate ascent over the conditionals of each state, visiting prefix
/// nodes from the deepest level up. Each node is replaced by its exact best
/// response unless that lowers the node's subtree value beyond rounding. Since a node
/// only affects its own subtree, one bottom-up sweep reaches the per-state
/// optimum on the prefix tree.
pub fn soft_improve(mdp: &TabularMdp, q: &QTable, policy: &TabularPolicy, weights: &[f64], alpha: f64) -> TabularPolicy {
    assert!(weights.len() == mdp.n && weights.iter().all(|b| *b >= 0.0 && b.is_finite()), "weights must be a nonnegative length-n profile");
    let m = mdp.num_tokens;
    let mut out = policy.clone();
    for s in 0..mdp.num_states {
        let mut below: Vec<f64> = mdp.parse.iter().map(|a| q.get(s, *a)).collect();
        for depth in (0..mdp.n).rev() {
            let temp = alpha * weights[depth];
            let count = m.pow(depth as u32);
            let mut values = Vec::with_capacity(count);
            for u in 0..count {
                let children = &below[u * m..(u + 1) * m];
                let old = out.node(s, depth, u).to_vec();
                let old_value = node_value(&old, children, temp);
                let cand = best_response(children, temp);
                let cand_value = node_value(&cand, children, temp);
                // the candidate is the exact maximizer, so only a gap beyond
                // rounding means it is worse
                let slack = 1e-14 * (1.0 + children.iter().fold(0.0f64, |a, c| a.max(c.abs())));
                if cand_value >= old_value - slack {
                    out.node_mut(s, depth, u).copy_from_slice(&cand);
                    values.push(cand_value);
                } else {
                    values.push(old_value);
                }
            }
            below = values;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub policy: TabularPolicy,
    pub q: QTable,
    pub iterations: usize,
    pub converged: bool,
    /// `min_{s,a} Q^{pi_{k+1}} - Q^{pi_k}` per step.
    pub monotonicity_log: Vec<f64>,
    /// `||Q^{pi_{k+1}} - Q^{pi_k}||_inf` per step.
    pub step_sizes: Vec<f64>,
}

/// Alternates exact evaluation and `soft_improve` from the uniform policy.
pub fn policy_iteration(
    mdp: &TabularMdp,
    weights: &[f64],
    alpha: f64,
    tol: f64,
    max_iters: usize,
) -> Result<PolicyIterationResult, TheoryError> {
    assert!(max_iters >= 1);
    let mut policy = TabularPolicy::for_mdp_uniform(mdp);
    let mut q = evaluate_exact(mdp, &policy, weights, alpha)?;
    let mut log = Vec::new();
    let mut steps = Vec::new();
    for k in 0..max_iters {
        let next_policy = soft_improve(mdp, &q, &policy, weights, alpha);
        let next_q = evaluate_exact(mdp, &next_policy, weights, alpha)?;
        let min_diff = next_q.min_diff(&q);
        let step = next_q.sup_dist(&q);
        log.push(min_diff);
        steps.push(step);
        if min_diff < -1e-7 {
            return Err(TheoryError::NonMonotone { iteration: k, min_diff });
        }
        policy = next_policy;
        q = next_q;
        if step < tol {
            return Ok(PolicyIterationResult {
                policy,
                q,
                iterations: k + 1,
                converged: true,
                monotonicity_log: log,
                step_sizes: steps,
            });
        }
    }
    Ok(PolicyIterationResult { policy, q, iterations: max_iters, converged: false, monotonicity_log: log, step_sizes: steps })
}

/// Enumerates every deterministic state-to-action map (alpha = 0) and
/// returns the best map by total state value together with its Q table.
pub fn brute_force_deterministic_optimum(mdp: &TabularMdp) -> Result<(Vec<usize>, QTable), TheoryError> {
    let (ns, na, m) = (mdp.num_states, mdp.num_actions, mdp.num_tokens);
    // lexicographically first sequence for each action
    let first_seq: Vec<usize> =
        (0..na).map(|a| mdp.parse.iter().position(|x| *x == a).ok_or(TheoryError::Shape("parse table not surjective".into()))).collect::<Result<_, _>>()?;
    let digit = |seq: usize, depth: usize| (seq / m.pow((mdp.n - 1 - depth) as u32)) % m;
    let zeros = vec![0.0; mdp.n];
    let mut best: Option<(f64, Vec<usize>, QTable)> = None;
    for code in 0..na.pow(ns as u32) {
        let map: Vec<usize> = (0..ns).map(|s| (code / na.pow(s as u32)) % na).collect();
        let policy = TabularPolicy::deterministic(ns, m, mdp.n, |s, depth, _| digit(first_seq[map[s]], depth));
        let q = evaluate_exact(mdp, &policy, &zeros, 0.0)?;
        let total: f64 = (0..ns).map(|s| q.get(s, map[s])).sum();
        if best.as_ref().is_none_or(|(b, _, _)| total > *b) {
            best = Some((total, map, q));
        }
    }
    let (_, map, q) = best.expect("at least one map");
    Ok((map, q))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular_theory::RandomMdpSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_when_alpha_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = RandomMdpSpec::default();
        for _ in 0..20 {
            let mdp = TabularMdp::random(&mut rng, &spec);
            let p = TabularPolicy::random(&mut rng, mdp.num_states, mdp.num_tokens, mdp.n, 1.0);
            let q = QTable::from_fn(mdp.num_states, mdp.num_actions, |s, a| ((s * 31 + a * 17) % 11) as f64 + a as f64 * 1e-3);
            let w: Vec<f64> = (0..mdp.n).map(|i| i as f64).collect();
            let next = soft_improve(&mdp, &q, &p, &w, 0.0);
            for s in 0..mdp.num_states {
                let dist = next.action_dist(&mdp, s);
                let row = q.row(s);
                let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let a = dist.iter().position(|p| *p == 1.0).expect("deterministic");
                assert_eq!(row[a], best);
            }
        }
    }

    #[test]
    fn greedy_tie_breaks_to_lowest_token() {
        assert_eq!(best_response(&[1.0, 3.0, 3.0], 0.0), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn constant_q_gives_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = TabularMdp::random(&mut rng, &RandomMdpSpec::default());
        let p = TabularPolicy::random(&mut rng, mdp.num_states, mdp.num_tokens, mdp.n, 5.0);
        let q = QTable::from_fn(mdp.num_states, mdp.num_actions, |_, _| 2.5);
        let next = soft_improve(&mdp, &q, &p, &vec![1.0; mdp.n], 0.8);
        let uni = TabularPolicy::for_mdp_uniform(&mdp);
        assert!(next.max_abs_diff(&uni) < 1e-12);
    }

    #[test]
    fn objective_never_decreases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let mdp = TabularMdp::random(&mut rng, &RandomMdpSpec::default());
            let p = TabularPolicy::random(&mut rng, mdp.num_states, mdp.num_tokens, mdp.n, 3.0);
            let w: Vec<f64> = (0..mdp.n).map(|_| rand::Rng::random::<f64>(&mut rng)).collect();
            let q = evaluate_exact(&mdp, &p, &w, 0.5).unwrap();
            let next = soft_improve(&mdp, &q, &p, &w, 0.5);
            for s in 0..mdp.num_states {
                assert!(state_objective(&mdp, &next, s, &q, &w, 0.5) >= state_objective(&mdp, &p, s, &q, &w, 0.5) - 1e-12);
            }
        }
    }

    #[test]
    fn improving_an_optimum_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mdp = TabularMdp::random(&mut rng, &RandomMdpSpec::default());
        let w = vec![0.7; mdp.n];
        let res = policy_iteration(&mdp, &w, 0.3, 1e-12, 1000).unwrap();
        assert!(res.converged);
        let again = soft_improve(&mdp, &res.q, &res.policy, &w, 0.3);
        let q2 = evaluate_exact(&mdp, &again, &w, 0.3).unwrap();
        assert!(q2.sup_dist(&res.q) < 1e-9);
    }

    #[test]
    fn classical_iteration_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let spec = RandomMdpSpec::default();
        for _ in 0..10 {
            let mdp = TabularMdp::random_shaped(&mut rng, 3, 2, 2, 2, &spec);
            let res = policy_iteration(&mdp, &[1.0, 1.0], 0.0, 1e-12, 1000).unwrap();
            let (map, q) = brute_force_deterministic_optimum(&mdp).unwrap();
            assert!(res.q.sup_dist(&q) < 1e-8);
            for (s, a) in map.iter().enumerate() {
                assert_eq!(res.policy.action_dist(&mdp, s)[*a], 1.0);
            }
        }
    }
}
