//! Worst-case policy gradients: a learned Q-variance approximator plus the
//! closed-form Gaussian CVaR actor objective.

use rand::Rng;

use crate::error::SirsaError;
use crate::nn::{adam_step, AdamState, GaussianPolicy, Mlp, MlpGrads};
use crate::rcmdp::{sample_context_uniform, UncertaintySet};
use crate::risk::{gaussian_cvar_closed_form, std_normal_cdf_inverse, std_normal_pdf};
use crate::Result;

use super::sac::{CriticBank, EncodedTransition, Temperature};
use super::FeatureCodec;

/// One WCPG batch element: the transition plus the uncertainty set its
/// Q-variance is measured over (the maximal set for plain WCPG, the episode's
/// initial set for Set-WCPG).
#[derive(Debug, Clone)]
pub struct WcpgTransition {
    pub enc: EncodedTransition,
    pub set: UncertaintySet,
    /// Normalized (center, width) features of `set`.
    pub set_features: Vec<f64>,
}

/// Regress the variance net onto Monte-Carlo variances of the critic over
/// contexts sampled from each element's set. Returns the batch MSE.
pub fn variance_net_update(
    var_net: &mut Mlp,
    var_opt: &mut AdamState,
    bank: &CriticBank,
    codec: &FeatureCodec,
    batch: &[WcpgTransition],
    n_context_samples: usize,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(SirsaError::EmptyInput("variance_net_update batch".into()));
    }
    if n_context_samples < 2 {
        return Err(SirsaError::InvalidConfig(
            "variance targets need ≥ 2 context samples".into(),
        ));
    }
    let inv = 1.0 / batch.len() as f64;
    let mut grads = MlpGrads::zeros_like(var_net);
    let mut loss = 0.0;
    for item in batch {
        // Monte-Carlo target: sample variance of Q(s, a, c) over the set.
        let mut qs = Vec::with_capacity(n_context_samples);
        for _ in 0..n_context_samples {
            let c = sample_context_uniform(&item.set, rng);
            let q_in = codec.critic_input(
                &item.enc.obs,
                item.enc.action,
                &codec.context_features(&c),
            );
            qs.push(bank.q_min(&q_in)?);
        }
        let mean = qs.iter().sum::<f64>() / qs.len() as f64;
        let target =
            qs.iter().map(|q| (q - mean) * (q - mean)).sum::<f64>() / (qs.len() - 1) as f64;

        let input = codec.variance_input(&item.enc.obs, item.enc.action, &item.set_features);
        let cache = var_net.forward_cached(&input)?;
        let delta = cache.output()[0] - target;
        loss += delta * delta * inv;
        let (g, _) = var_net.backward(&cache, &[2.0 * delta * inv])?;
        grads.add_assign(&g);
    }
    adam_step(var_net, &grads, var_opt)?;
    Ok(loss)
}

/// Pathwise actor step on the closed-form Gaussian CVaR
/// `Q(s, a, μ) − φ(Φ⁻¹(α))/α · √QVar(s, a, Ξ)` plus the entropy bonus.
/// Negative variance predictions are clamped to zero and counted.
#[allow(clippy::too_many_arguments)]
pub fn actor_update_wcpg(
    bank: &CriticBank,
    var_net: &Mlp,
    actor: &mut GaussianPolicy,
    actor_opt: &mut AdamState,
    temp: &mut Temperature,
    batch: &[WcpgTransition],
    alpha: f64,
    codec: &FeatureCodec,
    rng: &mut impl Rng,
    negative_variance_clamps: &mut u64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(SirsaError::EmptyInput("actor_update_wcpg batch".into()));
    }
    let ratio = if alpha >= 1.0 {
        0.0
    } else {
        let z = std_normal_cdf_inverse(alpha)?;
        std_normal_pdf(z) / alpha
    };
    let temperature = temp.value();
    let inv = 1.0 / batch.len() as f64;
    let mut total = MlpGrads::zeros_like(&actor.net);
    let mut loss = 0.0;
    let mut mean_log_prob = 0.0;
    for item in batch {
        let input = codec.actor_input(&item.enc.obs, &item.enc.actor_cond);
        let sample = actor.sample(&input, rng)?;
        let a = sample.action[0];

        // Critic at the set center.
        let center = crate::rcmdp::ContextVector(item.set.center.clone());
        let q_in = codec.critic_input(&item.enc.obs, a, &codec.context_features(&center));
        let (q_center, dq_in) = bank.q_min_grad_input(&q_in)?;
        let dq_da = dq_in[3] / codec.action_max;

        // Predicted variance, clamped at zero.
        let var_in = codec.variance_input(&item.enc.obs, a, &item.set_features);
        let cache = var_net.forward_cached(&var_in)?;
        let raw_var = cache.output()[0];
        let q_var = raw_var.max(0.0);
        if raw_var < 0.0 {
            *negative_variance_clamps += 1;
        }

        let mut dj_da = dq_da;
        if ratio > 0.0 && q_var > 1e-12 {
            let (_, dvar_in) = var_net.backward(&cache, &[1.0])?;
            let dvar_da = dvar_in[3] / codec.action_max;
            dj_da -= ratio * dvar_da / (2.0 * q_var.sqrt());
        }
        let objective = gaussian_cvar_closed_form(q_center, q_var, alpha, false)?;

        let mut g = actor.backprop_sample(&sample, &[-dj_da], temperature)?;
        g.scale(inv);
        total.add_assign(&g);
        loss += (temperature * sample.log_prob - objective) * inv;
        mean_log_prob += sample.log_prob * inv;
    }
    adam_step(&mut actor.net, &total, actor_opt)?;
    temp.update(mean_log_prob);
    Ok(loss)
}
