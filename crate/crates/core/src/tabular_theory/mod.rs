//! Exact finite-MDP verifier for the causal-weighted soft Bellman operator.
//!
//! Actions are produced by parsing a token sequence drawn from a tabular
//! autoregressive policy, so every expectation here is an exact enumeration.
//! The weights `B` are a fixed, state-independent profile.

mod bellman;
mod check;
mod improve;
mod mdp;
mod policy;

pub use bellman::{bellman_backup, bellman_backup_with, evaluate_exact, policy_evaluation, BackupHooks, QTable};
pub use check::{
    contraction_suite, decomposition_suite, improvement_suite, iteration_suite, theory_check, Metric, SuiteReport,
    TheoryCheckSpec, TheoryReport,
};
pub use improve::{
    brute_force_deterministic_optimum, policy_iteration, soft_improve, state_objective, PolicyIterationResult,
};
pub use mdp::{RandomMdpSpec, TabularMdp};
pub use policy::TabularPolicy;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TheoryError {
    #[error("policy evaluation did not converge within {0} iterations")]
    IterationCap(usize),
    #[error("policy iteration step {iteration} decreased Q by {min_diff:e}")]
    NonMonotone { iteration: usize, min_diff: f64 },
    #[error("linear system is singular")]
    Singular,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

/// Entropy in nats of a probability vector (0 log 0 = 0).
pub fn entropy(p: &[f64]) -> f64 {
    p.iter().filter(|x| **x > 0.0).map(|x| -x * x.ln()).sum::<f64>().max(0.0)
}
