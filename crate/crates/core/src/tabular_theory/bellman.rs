use nalgebra::{DMatrix, DVector};

use super::{TabularMdp, TabularPolicy, TheoryError};

pub const EVAL_ITERATION_CAP: usize = 100_000;

/// `Q(s, a)` stored row-major, `|S| x |A|`.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub num_states: usize,
    pub num_actions: usize,
    pub values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize, num_actions: usize) -> Self {
        Self { num_states, num_actions, values: vec![0.0; num_states * num_actions] }
    }

    pub fn from_fn(num_states: usize, num_actions: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let values = (0..num_states * num_actions).map(|i| f(i / num_actions, i % num_actions)).collect();
        Self { num_states, num_actions, values }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[s * self.num_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.values[s * self.num_actions..(s + 1) * self.num_actions]
    }

    pub fn sup_dist(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// `min_{s,a} (self - other)`.
    pub fn min_diff(&self, other: &QTable) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a - b).fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Test hooks for negative controls.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BackupHooks {
    /// Replaces the MDP discount inside the operator.
    pub discount_override: Option<f64>,
}

/// Per-successor quantities that do not depend on Q.
struct Successor {
    bonus: Vec<f64>,
    action_probs: Vec<Vec<f64>>,
}

fn successor_terms(mdp: &TabularMdp, policy: &TabularPolicy, weights: &[f64], alpha: f64) -> Successor {
    let bonus = (0..mdp.num_states)
        .map(|s| if alpha == 0.0 { 0.0 } else { alpha * policy.weighted_entropy_exact(s, weights) })
        .collect();
    let action_probs = (0..mdp.num_states).map(|s| policy.action_dist(mdp, s)).collect();
    Successor { bonus, action_probs }
}

fn backup_with_terms(mdp: &TabularMdp, q: &QTable, succ: &Successor, gamma: f64) -> QTable {
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let v: Vec<f64> = (0..ns)
        .map(|s2| succ.bonus[s2] + succ.action_probs[s2].iter().zip(q.row(s2)).map(|(p, x)| p * x).sum::<f64>())
        .collect();
    QTable::from_fn(ns, na, |s, a| mdp.r(s, a) + gamma * (0..ns).map(|s2| mdp.p(s, a, s2) * v[s2]).sum::<f64>())
}

pub fn bellman_backup(mdp: &TabularMdp, q: &QTable, policy: &TabularPolicy, weights: &[f64], alpha: f64) -> QTable {
    bellman_backup_with(mdp, q, policy, weights, alpha, &BackupHooks::default())
}

pub fn bellman_backup_with(
    mdp: &TabularMdp,
    q: &QTable,
    policy: &TabularPolicy,
    weights: &[f64],
    alpha: f64,
    hooks: &BackupHooks,
) -> QTable {
    let succ = successor_terms(mdp, policy, weights, alpha);
    backup_with_terms(mdp, q, &succ, hooks.discount_override.unwrap_or(mdp.gamma))
}

/// Iterates the backup from `Q = 0` until the sup-norm step is below `tol`.
/// Returns the fixed point and the residual trace.
pub fn policy_evaluation(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    weights: &[f64],
    alpha: f64,
    tol: f64,
    hooks: &BackupHooks,
) -> Result<(QTable, Vec<f64>), TheoryError> {
    policy.check_shape(mdp)?;
    let gamma = hooks.discount_override.unwrap_or(mdp.gamma);
    let succ = successor_terms(mdp, policy, weights, alpha);
    let mut q = QTable::zeros(mdp.num_states, mdp.num_actions);
    let mut trace = Vec::new();
    for _ in 0..EVAL_ITERATION_CAP {
        let next = backup_with_terms(mdp, &q, &succ, gamma);
        let res = next.sup_dist(&q);
        trace.push(res);
        q = next;
        if res < tol {
            return Ok((q, trace));
        }
        if !res.is_finite() {
            break;
        }
    }
    Err(TheoryError::IterationCap(EVAL_ITERATION_CAP))
}

/// Solves `(I - gamma P Pi) q = r + gamma P h` with an LU factorization.
pub fn evaluate_exact(
    mdp: &TabularMdp,
    policy: &TabularPolicy,
    weights: &[f64],
    alpha: f64,
) -> Result<QTable, TheoryError> {
    policy.check_shape(mdp)?;
    let (ns, na) = (mdp.num_states, mdp.num_actions);
    let dim = ns * na;
    let succ = successor_terms(mdp, policy, weights, alpha);
    let mut lhs = DMatrix::<f64>::identity(dim, dim);
    let mut rhs = DVector::<f64>::zeros(dim);
    for s in 0..ns {
        for a in 0..na {
            let row = s * na + a;
            let mut b = mdp.r(s, a);
            for s2 in 0..ns {
                let p = mdp.p(s, a, s2);
                if p == 0.0 {
                    continue;
                }
                b += mdp.gamma * p * succ.bonus[s2];
                for (a2, pa) in succ.action_probs[s2].iter().enumerate() {
                    lhs[(row, s2 * na + a2)] -= mdp.gamma * p * pa;
                }
            }
            rhs[row] = b;
        }
    }
    let sol = lhs.lu().solve(&rhs).ok_or(TheoryError::Singular)?;
    Ok(QTable { num_states: ns, num_actions: na, values: sol.iter().copied().collect() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tabular_theory::RandomMdpSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> TabularMdp {
        // one token position, two tokens, token t parses to action t
        TabularMdp {
            num_states: 2,
            num_tokens: 2,
            n: 1,
            num_actions: 2,
            parse: vec![0, 1],
            transitions: vec![1.0, 0.0, 0.0, 1.0, 0.5, 0.5, 1.0, 0.0],
            rewards: vec![1.0, 0.0, 0.0, 2.0],
            gamma: 0.9,
        }
    }

    #[test]
    fn myopic_backup_is_reward() {
        let mdp = two_state();
        let p = TabularPolicy::for_mdp_uniform(&mdp);
        let q = QTable::from_fn(2, 2, |s, a| (s * 7 + a) as f64);
        let hooks = BackupHooks { discount_override: Some(0.0) };
        let t = bellman_backup_with(&mdp, &q, &p, &[1.0], 1.0, &hooks);
        assert_eq!(t.values, mdp.rewards);
    }

    #[test]
    fn hand_solved_two_state() {
        // deterministic policy: state 0 takes action 0, state 1 takes action 1
        let mdp = two_state();
        let p = TabularPolicy::deterministic(2, 2, 1, |s, _, _| s);
        // V0 = 1 + 0.9 V0 -> 10; V1 = 2 + 0.9 (0 * V0 + 1 * V1)... action 1 at s1 goes to s0
        // Q(1,1) = 2 + 0.9 V0 = 11; V1 = 11
        // Q(0,1) = 0 + 0.9 V1 = 9.9; Q(1,0) = 0 + 0.9 (0.5 * 10 + 0.5 * 11) = 9.45
        let expected = [10.0, 9.9, 9.45, 11.0];
        let exact = evaluate_exact(&mdp, &p, &[0.0], 0.0).unwrap();
        let (iter, trace) = policy_evaluation(&mdp, &p, &[0.0], 0.0, 1e-12, &BackupHooks::default()).unwrap();
        for i in 0..4 {
            assert!((exact.values[i] - expected[i]).abs() < 1e-12);
            assert!((iter.values[i] - expected[i]).abs() < 1e-9);
        }
        for w in trace.windows(2) {
            assert!(w[1] <= mdp.gamma * w[0] + 1e-9);
        }
    }

    #[test]
    fn reward_shift_shifts_q_uniformly() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = TabularMdp::random(&mut rng, &RandomMdpSpec::default());
        let p = TabularPolicy::random(&mut rng, mdp.num_states, mdp.num_tokens, mdp.n, 2.0);
        let w = vec![0.5; mdp.n];
        let base = evaluate_exact(&mdp, &p, &w, 0.7).unwrap();
        let mut shifted = mdp.clone();
        shifted.rewards.iter_mut().for_each(|r| *r += 0.25);
        let q = evaluate_exact(&shifted, &p, &w, 0.7).unwrap();
        let c = 0.25 / (1.0 - mdp.gamma);
        for (a, b) in q.values.iter().zip(&base.values) {
            assert!((a - b - c).abs() < 1e-9);
        }
    }

    #[test]
    fn alpha_zero_ignores_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = TabularMdp::random(&mut rng, &RandomMdpSpec::default());
        let p = TabularPolicy::random(&mut rng, mdp.num_states, mdp.num_tokens, mdp.n, 2.0);
        let q = QTable::from_fn(mdp.num_states, mdp.num_actions, |s, a| (s as f64) - (a as f64));
        let a = bellman_backup(&mdp, &q, &p, &vec![0.3; mdp.n], 0.0);
        let b = bellman_backup(&mdp, &q, &p, &vec![5.0; mdp.n], 0.0);
        assert_eq!(a, b);
    }

    #[test]
    fn diverging_discount_hits_cap_or_blows_up() {
        let mdp = two_state();
        let p = TabularPolicy::for_mdp_uniform(&mdp);
        let hooks = BackupHooks { discount_override: Some(1.5) };
        assert!(policy_evaluation(&mdp, &p, &[1.0], 1.0, 1e-10, &hooks).is_err());
    }
}
