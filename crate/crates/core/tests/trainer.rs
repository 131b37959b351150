mod common;

use coso::coso_rl::{EntropyPlacement, Optimizer, Phase, RlError, WeightSource};
use coso::harness::{run_experiment, Arm, RunConfig};

use common::{fingerprint, small_hyper, trainer};

#[test]
fn phases_run_in_order() {
    let mut t = trainer("numberline", small_hyper(), 3);
    for _ in 0..2 {
        let r = t.train_iteration().unwrap();
        assert_eq!(r.events, vec![Phase::Rollout, Phase::Counterfactual, Phase::ScmUpdate, Phase::PolicyUpdate]);
    }
    assert_eq!(t.iteration, 2);
    assert_eq!(t.env_steps, 2 * small_hyper().rollout_steps() as u64);
}

#[test]
fn counterfactual_phase_costs_n_plus_one_evaluations_per_step() {
    for env in ["numberline", "menunav"] {
        let t = trainer(env, small_hyper(), 1);
        let mut trajs = t.rollout().unwrap();
        let m: usize = trajs.iter().map(|tr| tr.steps.len()).sum();
        let n = t.env.grammar().len();
        let before = t.scm.eval_count();
        t.counterfactual_phase(&mut trajs).unwrap();
        assert_eq!(t.scm.eval_count() - before, (m * (n + 1)) as u64, "{env}");
    }
}

#[test]
fn first_ppo_minibatch_ratio_is_one() {
    let mut t = trainer("menunav", small_hyper(), 5);
    for _ in 0..3 {
        let r = t.train_iteration().unwrap();
        assert!(r.first_ratio_max_dev < 1e-12, "{}", r.first_ratio_max_dev);
    }
}

#[test]
fn stale_buffer_rejected() {
    let mut t = trainer("numberline", small_hyper(), 2);
    let mut trajs = t.rollout().unwrap();
    t.counterfactual_phase(&mut trajs).unwrap();
    t.policy_phase(&mut trajs).unwrap();
    match t.policy_phase(&mut trajs) {
        Err(RlError::StaleTrajectories { .. }) => {}
        other => panic!("expected stale rejection, got {other:?}"),
    }
}

fn weights_after(hyper: coso::coso_rl::Hyperparams, iters: usize) -> (u64, Vec<coso::coso_rl::UpdateReport>) {
    let mut t = trainer("numberline", hyper, 11);
    let reports = (0..iters).map(|_| t.train_iteration().unwrap()).collect();
    (fingerprint(&t.policy.weights), reports)
}

#[test]
fn unit_constant_weights_match_naive_entropy_bitwise() {
    for placement in [EntropyPlacement::LossBonus, EntropyPlacement::RewardBonus] {
        for optimizer in [Optimizer::Ppo, Optimizer::Awr] {
            let base = coso::coso_rl::Hyperparams { alpha: 0.3, entropy_placement: placement, optimizer, ..small_hyper() };
            let unit = weights_after(coso::coso_rl::Hyperparams { weight_source: WeightSource::Unit, ..base.clone() }, 3);
            let ones = weights_after(coso::coso_rl::Hyperparams { weight_source: WeightSource::Constant(1.0), ..base }, 3);
            assert_eq!(unit.0, ones.0, "{placement:?} {optimizer:?}");
        }
    }
}

#[test]
fn alpha_zero_ignores_weight_source() {
    let base = coso::coso_rl::Hyperparams { alpha: 0.0, ..small_hyper() };
    let a = weights_after(coso::coso_rl::Hyperparams { weight_source: WeightSource::Scm, ..base.clone() }, 3);
    let b = weights_after(coso::coso_rl::Hyperparams { weight_source: WeightSource::Constant(0.25), ..base }, 3);
    assert_eq!(a.0, b.0);
    assert!(a.1.iter().all(|r| r.mean_weighted_entropy.is_none()));
}

#[test]
fn constant_weights_scale_weighted_entropy() {
    let c = 0.01;
    let mut t = trainer("menunav", coso::coso_rl::Hyperparams { weight_source: WeightSource::Constant(c), ..small_hyper() }, 4);
    let (_, trajs) = t.train_iteration_detailed().unwrap();
    for s in trajs.iter().flat_map(|tr| tr.steps.iter()) {
        let h: f64 = s.sample.entropies.iter().sum();
        assert!((s.weighted_entropy - c * h).abs() <= 1e-12 * (1.0 + h));
    }
}

#[test]
fn same_seed_same_trainer_state() {
    let (a, ra) = weights_after(small_hyper(), 4);
    let (b, rb) = weights_after(small_hyper(), 4);
    assert_eq!(a, b);
    assert_eq!(serde_json::to_string(&ra).unwrap(), serde_json::to_string(&rb).unwrap());
    let (c, _) = {
        let mut t = trainer("numberline", small_hyper(), 12);
        for _ in 0..4 {
            t.train_iteration().unwrap();
        }
        (fingerprint(&t.policy.weights), ())
    };
    assert_ne!(a, c);
}

fn tiny_config(dir: &std::path::Path) -> RunConfig {
    RunConfig {
        name: "det".into(),
        env: "menunav".into(),
        arm: Arm::Coso,
        seeds: vec![0, 1],
        total_env_steps: 3 * small_hyper().rollout_steps() as u64,
        eval_every: 1,
        eval_episodes: 5,
        output_dir: dir.to_path_buf(),
        hyper: small_hyper(),
        ..RunConfig::default()
    }
}

#[test]
fn rerun_gives_identical_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run_experiment(&tiny_config(a.path())).unwrap();
    run_experiment(&tiny_config(b.path())).unwrap();
    for rel in ["det/coso/summary.csv", "det/coso/seed_0/metrics.jsonl", "det/coso/seed_1/curve.csv", "det/coso/seed_1/checkpoint.ckpt"] {
        let x = std::fs::read(a.path().join(rel)).unwrap();
        let y = std::fs::read(b.path().join(rel)).unwrap();
        assert!(x == y, "{rel} differs");
    }
}

#[test]
fn rl_arm_reports_no_weighted_entropy() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = RunConfig { arm: Arm::Rl, seeds: vec![0], ..tiny_config(dir.path()) };
    run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(dir.path().join("det/rl/seed_0/metrics.jsonl")).unwrap();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["mean_weighted_entropy"].is_null(), "{line}");
    }
}
