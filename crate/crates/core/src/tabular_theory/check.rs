use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{
    bellman_backup_with, brute_force_deterministic_optimum, evaluate_exact, policy_evaluation, policy_iteration,
    soft_improve, state_objective, BackupHooks, QTable, RandomMdpSpec, TabularMdp, TabularPolicy,
};
use crate::coso_rl::mix_seed;
use crate::par;

const DECOMPOSITION_TOL: f64 = 1e-10;
const LIPSCHITZ_SLACK: f64 = 1e-9;
const MONOTONE_TOL: f64 = 1e-7;
const OBJECTIVE_TOL: f64 = 1e-12;
// absolute rounding floor when comparing consecutive evaluation residuals
const RESIDUAL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct TheoryCheckSpec {
    pub instances: usize,
    pub q_pairs: usize,
    pub decomposition_policies: usize,
    pub brute_force_instances: usize,
    /// Tolerance for Q comparisons (fixed point, improvement, brute force).
    pub tol: f64,
    pub max_iters: usize,
    pub base_seed: u64,
    #[serde(skip)]
    pub hooks: BackupHooks,
}

impl Default for TheoryCheckSpec {
    fn default() -> Self {
        Self {
            instances: 50,
            q_pairs: 100,
            decomposition_policies: 100,
            brute_force_instances: 20,
            tol: 1e-8,
            max_iters: 1000,
            base_seed: 0,
            hooks: BackupHooks::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub instances: usize,
    /// Worst value of each audited quantity, with its bound.
    pub worst: Vec<Metric>,
    pub failing_seeds: Vec<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Metric {
    pub name: String,
    pub worst: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoryReport {
    pub passed: bool,
    pub suites: Vec<SuiteReport>,
}

impl TheoryReport {
    pub fn suite(&self, name: &str) -> Option<&SuiteReport> {
        self.suites.iter().find(|s| s.name == name)
    }
}

/// Per-instance outcome: metric values (larger is worse) and a pass flag.
struct Outcome {
    seed: u64,
    values: Vec<f64>,
    ok: bool,
}

fn summarize(name: &str, names: &[&str], bounds: &[f64], outcomes: Vec<Outcome>) -> SuiteReport {
    let worst = names
        .iter()
        .enumerate()
        .map(|(i, n)| Metric {
            name: n.to_string(),
            worst: outcomes.iter().map(|o| o.values[i]).fold(f64::NEG_INFINITY, |a, b| if b.is_nan() || a.is_nan() { f64::NAN } else { a.max(b) }),
            bound: bounds[i],
        })
        .collect();
    let failing_seeds: Vec<u64> = outcomes.iter().filter(|o| !o.ok).map(|o| o.seed).collect();
    SuiteReport { name: name.into(), passed: failing_seeds.is_empty(), instances: outcomes.len(), worst, failing_seeds }
}

fn weights<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..=1.0)).collect()
}

fn instance(spec: &TheoryCheckSpec, suite: u64, i: usize) -> (u64, ChaCha8Rng, TabularMdp, TabularPolicy, Vec<f64>, f64) {
    let seed = mix_seed(&[spec.base_seed, suite, i as u64]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = TabularMdp::random(&mut rng, &RandomMdpSpec::default());
    let sharp = rng.random_range(0.0..6.0);
    let policy = TabularPolicy::random(&mut rng, mdp.num_states, mdp.num_tokens, mdp.n, sharp);
    let w = weights(&mut rng, mdp.n);
    // every fifth instance has the entropy term off
    let alpha = if i % 5 == 4 { 0.0 } else { rng.random_range(0.05..2.0) };
    (seed, rng, mdp, policy, w, alpha)
}

pub fn decomposition_suite(spec: &TheoryCheckSpec) -> SuiteReport {
    let outcomes = par::map_indices(spec.decomposition_policies, |i| {
        let seed = mix_seed(&[spec.base_seed, 1, i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(2..=4);
        let n = rng.random_range(1..=4);
        let sharp = if i % 4 == 3 { 50.0 } else { rng.random_range(0.0..8.0) };
        let p = TabularPolicy::random(&mut rng, 2, m, n, sharp);
        let diff = (0..2).map(|s| p.entropy_decomposition_check(s).2).fold(0.0, f64::max);
        Outcome { seed, values: vec![diff], ok: diff <= DECOMPOSITION_TOL }
    });
    summarize("entropy_decomposition", &["abs_diff"], &[DECOMPOSITION_TOL], outcomes)
}

pub fn contraction_suite(spec: &TheoryCheckSpec) -> SuiteReport {
    let outcomes = par::map_indices(spec.instances, |i| {
        let (seed, mut rng, mdp, policy, w, alpha) = instance(spec, 2, i);
        let (ns, na) = (mdp.num_states, mdp.num_actions);
        let mut lipschitz_excess = f64::NEG_INFINITY;
        for k in 0..spec.q_pairs {
            let q1 = QTable::from_fn(ns, na, |_, _| rng.random_range(-10.0..10.0));
            let q2 = match k % 3 {
                // a uniform shift is where the bound is tight
                0 => {
                    let c = rng.random_range(-5.0..5.0);
                    QTable::from_fn(ns, na, |s, a| q1.get(s, a) + c)
                }
                1 => QTable::from_fn(ns, na, |_, _| rng.random_range(-10.0..10.0)),
                _ => {
                    let c = rng.random_range(0.1..5.0);
                    QTable::from_fn(ns, na, |s, a| q1.get(s, a) + c * rng.random_range(0.5..1.0))
                }
            };
            let t1 = bellman_backup_with(&mdp, &q1, &policy, &w, alpha, &spec.hooks);
            let t2 = bellman_backup_with(&mdp, &q2, &policy, &w, alpha, &spec.hooks);
            let d = q1.sup_dist(&q2);
            if d > 0.0 {
                lipschitz_excess = lipschitz_excess.max(t1.sup_dist(&t2) / d - mdp.gamma);
            }
        }
        let mut fixed_point_err = f64::INFINITY;
        let mut backup_residual = f64::INFINITY;
        let mut trace_excess = f64::INFINITY;
        let mut bound_violation = f64::INFINITY;
        let eval_tol = spec.tol * (1.0 - mdp.gamma) * 1e-2;
        if let (Ok((q, trace)), Ok(exact)) =
            (policy_evaluation(&mdp, &policy, &w, alpha, eval_tol, &spec.hooks), evaluate_exact(&mdp, &policy, &w, alpha))
        {
            fixed_point_err = q.sup_dist(&exact);
            backup_residual = bellman_backup_with(&mdp, &q, &policy, &w, alpha, &spec.hooks).sup_dist(&q);
            trace_excess = trace
                .windows(2)
                .map(|x| x[1] - ((mdp.gamma + LIPSCHITZ_SLACK) * x[0] + RESIDUAL_FLOOR))
                .fold(f64::NEG_INFINITY, f64::max)
                .max(-1.0);
            let (rmin, rmax) = mdp.reward_bounds();
            let wmax = w.iter().copied().fold(0.0, f64::max);
            let lo = rmin / (1.0 - mdp.gamma);
            let hi = (rmax + alpha * wmax * mdp.n as f64 * (mdp.num_tokens as f64).ln()) / (1.0 - mdp.gamma);
            bound_violation = exact.values.iter().map(|v| (lo - v).max(v - hi)).fold(f64::NEG_INFINITY, f64::max);
        }
        let ok = lipschitz_excess <= LIPSCHITZ_SLACK
            && fixed_point_err <= spec.tol
            && backup_residual <= spec.tol
            && trace_excess <= 0.0
            && bound_violation <= 1e-9;
        Outcome { seed, values: vec![lipschitz_excess, fixed_point_err, backup_residual, trace_excess, bound_violation], ok }
    });
    summarize(
        "contraction",
        &["lipschitz_minus_gamma", "fixed_point_vs_linear_solve", "backup_residual", "residual_ratio_excess", "bound_violation"],
        &[LIPSCHITZ_SLACK, spec.tol, spec.tol, 0.0, 1e-9],
        outcomes,
    )
}

pub fn improvement_suite(spec: &TheoryCheckSpec) -> SuiteReport {
    let outcomes = par::map_indices(spec.instances, |i| {
        let (seed, _, mdp, policy, w, alpha) = instance(spec, 3, i);
        let (q_drop, obj_drop) = match evaluate_exact(&mdp, &policy, &w, alpha) {
            Ok(q) => {
                let next = soft_improve(&mdp, &q, &policy, &w, alpha);
                let obj_drop = (0..mdp.num_states)
                    .map(|s| {
                        state_objective(&mdp, &policy, s, &q, &w, alpha) - state_objective(&mdp, &next, s, &q, &w, alpha)
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
                match evaluate_exact(&mdp, &next, &w, alpha) {
                    Ok(q2) => (-q2.min_diff(&q), obj_drop),
                    Err(_) => (f64::INFINITY, obj_drop),
                }
            }
            Err(_) => (f64::INFINITY, f64::INFINITY),
        };
        Outcome { seed, values: vec![q_drop, obj_drop], ok: q_drop <= spec.tol && obj_drop <= OBJECTIVE_TOL }
    });
    summarize("improvement", &["max_q_decrease", "max_objective_decrease"], &[spec.tol, OBJECTIVE_TOL], outcomes)
}

pub fn iteration_suite(spec: &TheoryCheckSpec) -> SuiteReport {
    let mut outcomes = par::map_indices(spec.instances, |i| {
        let (seed, _, mdp, _, w, alpha) = instance(spec, 4, i);
        match policy_iteration(&mdp, &w, alpha, spec.tol * 1e-2, spec.max_iters) {
            Ok(res) => {
                let worst_drop = res.monotonicity_log.iter().map(|d| -d).fold(f64::NEG_INFINITY, f64::max);
                let extra = soft_improve(&mdp, &res.q, &res.policy, &w, alpha);
                let extra_step =
                    evaluate_exact(&mdp, &extra, &w, alpha).map(|q| q.sup_dist(&res.q)).unwrap_or(f64::INFINITY);
                let iters = res.iterations as f64;
                let ok = res.converged && worst_drop <= MONOTONE_TOL && extra_step <= spec.tol;
                Outcome { seed, values: vec![worst_drop, iters, extra_step, 0.0], ok }
            }
            Err(_) => Outcome { seed, values: vec![f64::INFINITY, spec.max_iters as f64, f64::INFINITY, 0.0], ok: false },
        }
    });
    outcomes.extend(par::map_indices(spec.brute_force_instances, |i| {
        let seed = mix_seed(&[spec.base_seed, 5, i as u64]);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.random_range(2..=3);
        let n = rng.random_range(1..=3);
        let mdp = TabularMdp::random_shaped(&mut rng, 3, m, n, 2, &RandomMdpSpec::default());
        let w = weights(&mut rng, n);
        let gap = match (policy_iteration(&mdp, &w, 0.0, spec.tol * 1e-2, spec.max_iters), brute_force_deterministic_optimum(&mdp)) {
            (Ok(res), Ok((_, q))) if res.converged => res.q.sup_dist(&q),
            _ => f64::INFINITY,
        };
        Outcome { seed, values: vec![0.0, 0.0, 0.0, gap], ok: gap <= spec.tol }
    }));
    summarize(
        "iteration",
        &["max_q_decrease", "iterations", "extra_iteration_step", "brute_force_gap"],
        &[MONOTONE_TOL, spec.max_iters as f64, spec.tol, spec.tol],
        outcomes,
    )
}

/// Runs all four suites.
pub fn theory_check(spec: &TheoryCheckSpec) -> TheoryReport {
    let suites = vec![decomposition_suite(spec), contraction_suite(spec), improvement_suite(spec), iteration_suite(spec)];
    TheoryReport { passed: suites.iter().all(|s| s.passed), suites }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> TheoryCheckSpec {
        TheoryCheckSpec { instances: 8, q_pairs: 20, decomposition_policies: 10, brute_force_instances: 4, ..Default::default() }
    }

    #[test]
    fn small_spec_passes() {
        let r = theory_check(&small());
        assert!(r.passed, "{r:#?}");
        assert_eq!(r.suites.len(), 4);
    }

    #[test]
    fn corrupted_discount_fails_contraction_and_names_seeds() {
        let spec = TheoryCheckSpec { hooks: BackupHooks { discount_override: Some(1.5) }, ..small() };
        let r = contraction_suite(&spec);
        assert!(!r.passed);
        assert_eq!(r.failing_seeds.len(), spec.instances);
        assert!(r.failing_seeds.contains(&mix_seed(&[spec.base_seed, 2, 0])));
    }
}
