use rand::seq::SliceRandom;
use rand::Rng;

use super::ppo::{fit_value, flatten};
use super::{AwrWeighting, EntropyPlacement, Hyperparams, LinearValue, RlError, Trajectory, UpdateReport};
use crate::optim::{clip_grad_norm, Adam};
use crate::par;
use crate::policy::{sum_ordered, PolicyParams, GRAD_CHUNK};

/// Per-step regression weights from raw (unnormalized) advantages.
pub(crate) fn awr_weights(adv: &[f64], hyper: &Hyperparams) -> Vec<f64> {
    adv.iter()
        .map(|a| match hyper.awr_weighting {
            AwrWeighting::Exp => (a / hyper.awr_beta).exp().clamp(0.0, hyper.awr_clamp),
            AwrWeighting::Filter => {
                if *a > hyper.awr_threshold {
                    1.0
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Advantage-weighted regression: maximize
/// `mean(w * sum_i log p_i) + alpha * mean(H^B)` over one shuffled epoch.
///
/// Off-policy data is accepted. If every weight is zero the update is
/// skipped and the report says so.
#[allow(clippy::too_many_arguments)]
pub fn awr_update<R: Rng + ?Sized>(
    params: &mut PolicyParams,
    opt: &mut Adam,
    value: &mut LinearValue,
    trajs: &[Trajectory],
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<UpdateReport, RlError> {
    let n = params.n();
    let flat = flatten(trajs, hyper, n);
    if flat.is_empty() {
        return Err(RlError::EmptyBatch);
    }
    let adv: Vec<f64> = flat.iter().map(|f| f.advantage).collect();
    let weights = awr_weights(&adv, hyper);
    let mut order: Vec<usize> = (0..flat.len()).collect();
    order.shuffle(rng);
    let mut report = UpdateReport::empty(0);
    if weights.iter().all(|w| *w == 0.0) {
        report.skipped = true;
        report.value_loss = fit_value(value, &flat, &order, hyper.minibatch_size);
        return Ok(report);
    }

    let use_entropy = hyper.alpha != 0.0 && hyper.entropy_placement == EntropyPlacement::LossBonus;
    let mut loss_sum = 0.0;
    let mut grad_norm_sum = 0.0;
    let mut batches = 0;
    for mb in order.chunks(hyper.minibatch_size) {
        let m = mb.len() as f64;
        let partials = par::map_chunks(mb, GRAD_CHUNK, |chunk| {
            let mut g = vec![0.0; params.weights.len()];
            let mut obj = 0.0;
            for &i in chunk {
                let f = &flat[i];
                let fwd = params.forward(f.state, f.tokens).expect("trajectory matches policy shape");
                let w = weights[i];
                obj += w * fwd.logprobs().iter().sum::<f64>();
                let ent_coefs: Vec<f64> = if use_entropy {
                    obj += hyper.alpha * fwd.entropies().iter().zip(&f.weights).map(|(h, b)| b * h).sum::<f64>();
                    f.weights.iter().map(|b| hyper.alpha * b / m).collect()
                } else {
                    Vec::new()
                };
                params.backward(&fwd, w / m, &ent_coefs, &mut g);
            }
            (g, obj)
        });
        let mut grads = Vec::with_capacity(partials.len());
        let mut obj = 0.0;
        for (g, o) in partials {
            grads.push(g);
            obj += o;
        }
        let mut grad = sum_ordered(grads, params.weights.len());
        grad_norm_sum += clip_grad_norm(&mut grad, hyper.max_grad_norm);
        opt.ascend(&mut params.weights, &grad);
        loss_sum += -obj / m;
        batches += 1;
    }
    report.value_loss = fit_value(value, &flat, &order, hyper.minibatch_size);
    params.version += 1;
    report.policy_loss = loss_sum / batches as f64;
    report.grad_norm = grad_norm_sum / batches as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_modes() {
        let h = Hyperparams { awr_beta: 1e12, ..Default::default() };
        let w = awr_weights(&[-3.0, 0.0, 5.0], &h);
        assert!(w.iter().all(|x| (x - 1.0).abs() < 1e-9));
        let h = Hyperparams { awr_beta: 0.01, ..Default::default() };
        assert_eq!(awr_weights(&[5.0], &h), vec![20.0]);
        let h = Hyperparams { awr_weighting: AwrWeighting::Filter, awr_threshold: 0.0, ..Default::default() };
        assert_eq!(awr_weights(&[-1.0, 0.0, 0.5], &h), vec![0.0, 0.0, 1.0]);
    }
}
