use rand::seq::SliceRandom;
use rand::Rng;

use super::{EntropyPlacement, Hyperparams, LinearValue, RlError, Trajectory, UpdateReport};
use crate::optim::{clip_grad_norm, Adam};
use crate::par;
use crate::policy::{sum_ordered, PolicyParams, GRAD_CHUNK};

/// Flattened view of the steps used by both optimizers.
pub(crate) struct Flat<'a> {
    pub state: &'a [u8],
    pub tokens: &'a [crate::Token],
    pub old_logprob: f64,
    pub advantage: f64,
    pub ret: f64,
    pub weights: Vec<f64>,
}

pub(crate) fn flatten<'a>(trajs: &'a [Trajectory], hyper: &Hyperparams, n: usize) -> Vec<Flat<'a>> {
    trajs
        .iter()
        .flat_map(|t| t.steps.iter())
        .map(|s| Flat {
            state: &s.state.features,
            tokens: s.sample.utterance.tokens(),
            old_logprob: s.sample.total_logprob(),
            advantage: s.advantage,
            ret: s.ret,
            weights: effective_weights(s.weights.as_ref(), hyper, n),
        })
        .collect()
}

pub(crate) fn effective_weights(w: Option<&crate::counterfactual::CausalWeights>, hyper: &Hyperparams, n: usize) -> Vec<f64> {
    match hyper.weight_source {
        super::WeightSource::Unit => vec![1.0; n],
        super::WeightSource::Constant(c) => vec![c; n],
        super::WeightSource::Scm => w.map(|w| w.effective().to_vec()).unwrap_or_else(|| vec![1.0; n]),
    }
}

pub(crate) fn normalized_advantages(flat: &[Flat<'_>], normalize: bool) -> Vec<f64> {
    let adv: Vec<f64> = flat.iter().map(|f| f.advantage).collect();
    if !normalize || adv.len() < 2 {
        return adv;
    }
    let m = adv.iter().sum::<f64>() / adv.len() as f64;
    let var = adv.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / adv.len() as f64;
    let sd = var.sqrt().max(1e-8);
    adv.iter().map(|a| (a - m) / sd).collect()
}

pub(crate) fn fit_value(value: &mut LinearValue, flat: &[Flat<'_>], order: &[usize], mb: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0;
    for chunk in order.chunks(mb) {
        let states: Vec<&[u8]> = chunk.iter().map(|&i| flat[i].state).collect();
        let targets: Vec<f64> = chunk.iter().map(|&i| flat[i].ret).collect();
        total += value.fit_step(&states, &targets);
        count += 1;
    }
    total / count.max(1) as f64
}

/// One epoch of clipped-surrogate PPO over shuffled minibatches.
///
/// The importance ratio is taken at the utterance level,
/// `exp(sum_i new_logp_i - sum_i old_logp_i)`. With the loss-bonus placement,
/// `alpha * mean(H^B)` is added to the objective; `alpha == 0` skips the term.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    opt: &mut Adam,
    value: &mut LinearValue,
    trajs: &[Trajectory],
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<UpdateReport, RlError> {
    if let Some(t) = trajs.iter().find(|t| t.snapshot != params.version) {
        return Err(RlError::StaleTrajectories { collected: t.snapshot, current: params.version });
    }
    let n = params.n();
    let flat = flatten(trajs, hyper, n);
    if flat.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let adv = normalized_advantages(&flat, hyper.normalize_advantages);
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.shuffle(rng);

    let use_entropy = hyper.alpha != 0.0 && hyper.entropy_placement == EntropyPlacement::LossBonus;
    let mut report = UpdateReport::empty(0);
    let mut loss_sum = 0.0;
    let mut grad_norm_sum = 0.0;
    let mut batches = 0;
    for (bi, mb) in order.chunks(hyper.minibatch_size).enumerate() {
        let m = mb.len() as f64;
        let partials = par::map_chunks(mb, GRAD_CHUNK, |chunk| {
            let mut g = vec![0.0; params.weights.len()];
            let mut surrogate = 0.0;
            let mut ent_bonus = 0.0;
            let mut max_dev: f64 = 0.0;
            for &i in chunk {
                let f = &flat[i];
                let fwd = params.forward(f.state, f.tokens).expect("trajectory matches policy shape");
                let new_lp: f64 = fwd.logprobs().iter().sum();
                let ratio = (new_lp - f.old_logprob).exp();
                max_dev = max_dev.max((ratio - 1.0).abs());
                let a = adv[i];
                let clipped = ratio.clamp(1.0 - hyper.clip_eps, 1.0 + hyper.clip_eps);
                surrogate += (ratio * a).min(clipped * a);
                // gradient of min(r A, clip(r) A) is r A d(log pi) unless the clip is active
                let active = (a >= 0.0 && ratio < 1.0 + hyper.clip_eps) || (a < 0.0 && ratio > 1.0 - hyper.clip_eps);
                let lp_coef = if active { a * ratio / m } else { 0.0 };
                let ent_coefs: Vec<f64> = if use_entropy {
                    let h = fwd.entropies();
                    ent_bonus += h.iter().zip(&f.weights).map(|(h, b)| b * h).sum::<f64>();
                    f.weights.iter().map(|b| hyper.alpha * b / m).collect()
                } else {
                    Vec::new()
                };
                params.backward(&fwd, lp_coef, &ent_coefs, &mut g);
            }
            (g, surrogate, ent_bonus, max_dev)
        });
        let mut grads = Vec::with_capacity(partials.len());
        let mut surrogate = 0.0;
        let mut ent_bonus = 0.0;
        let mut max_dev: f64 = 0.0;
        for (g, s, e, d) in partials {
            grads.push(g);
            surrogate += s;
            ent_bonus += e;
            max_dev = max_dev.max(d);
        }
        if bi == 0 {
            report.first_ratio_max_dev = max_dev;
        }
        let mut grad = sum_ordered(grads, params.weights.len());
        grad_norm_sum += clip_grad_norm(&mut grad, hyper.max_grad_norm);
        opt.ascend(&mut params.weights, &grad);
        let ent_term = if use_entropy { hyper.alpha * ent_bonus / m } else { 0.0 };
        loss_sum += -(surrogate / m) - ent_term;
        batches += 1;
    }
    report.value_loss = fit_value(value, &flat, &order, hyper.minibatch_size);
    params.version += 1;
    report.policy_loss = loss_sum / batches as f64;
    report.grad_norm = grad_norm_sum / batches as f64;
    Ok(report)
}
