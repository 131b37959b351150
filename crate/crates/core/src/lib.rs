//! Counterfactual causal-weighted entropy RL for token-sequence policies.
//!
//! A policy emits a fixed-length utterance token by token; a deterministic
//! parser turns the utterance into an environment action. A surrogate
//! classifier (the "SCM") imitates the parser, and nullifying one token at a
//! time against it yields a per-token causal weight. The entropy bonus of the
//! RL objective is then weighted per token by those causal weights.
//!
//! Modules:
//! - [`textmdp`]: toy environments with text-shaped action interfaces.
//! - [`policy`]: autoregressive linear-softmax policy with exact entropies.
//! - [`scm`]: the surrogate classifier over utterances.
//! - [`counterfactual`]: nullification interventions and causal weights.
//! - [`coso_rl`]: weighted-entropy objective, PPO/AWR updates, training iteration.
//! - [`tabular_theory`]: exact finite-MDP checks of evaluation/improvement/iteration.
//! - [`harness`]: configs, experiments, ablations, reports, checkpoints.

pub mod coso_rl;
pub mod counterfactual;
pub mod harness;
pub mod optim;
pub mod par;
pub mod policy;
pub mod scm;
pub mod tabular_theory;
pub mod textmdp;

pub use textmdp::{Token, EOS, NULL};
