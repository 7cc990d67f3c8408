//! Squashed-Gaussian policy head.
//!
//! The backing network outputs `[mean, log_std]` per action dimension; actions
//! are `a_max · tanh(mean + std·ε)` with the usual tanh log-density correction.
//! Gradients flow through the reparameterized sample, so pathwise objectives
//! (Q-values, CVaR estimates) and entropy terms share one backward path.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache, MlpGrads};
use crate::Result;

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Numerically stable `ln(1 − tanh²(u)) = 2(ln 2 − u − softplus(−2u))`.
fn ln_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        0.0
    } else {
        x.exp().ln_1p()
    }
}

/// Stochastic policy with bounded actions.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub net: Mlp,
    pub action_dim: usize,
    pub action_max: f64,
}

/// One reparameterized draw with everything the backward pass needs.
#[derive(Debug, Clone)]
pub struct PolicySample {
    pub action: Vec<f64>,
    pub pre_tanh: Vec<f64>,
    pub eps: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    /// Per-dimension flag: raw log-std fell outside the clamp.
    pub clamped: Vec<bool>,
    pub log_prob: f64,
    cache: MlpCache,
}

impl GaussianPolicy {
    pub fn new(net: Mlp, action_dim: usize, action_max: f64) -> Self {
        assert_eq!(net.out_dim(), 2 * action_dim, "policy net needs mean+log_std heads");
        Self {
            net,
            action_dim,
            action_max,
        }
    }

    /// Deterministic evaluation action: `a_max · tanh(mean)`.
    pub fn mean_action(&self, input: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(input)?;
        Ok(out[..self.action_dim]
            .iter()
            .map(|m| self.action_max * m.tanh())
            .collect())
    }

    /// Reparameterized sample `a = a_max·tanh(mean + std·ε)`, ε ~ N(0, I).
    pub fn sample(&self, input: &[f64], rng: &mut impl Rng) -> Result<PolicySample> {
        let eps: Vec<f64> = (0..self.action_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        self.sample_with_eps(input, &eps)
    }

    /// Sample with externally supplied noise; the basis for deterministic
    /// replay and finite-difference checks.
    pub fn sample_with_eps(&self, input: &[f64], eps: &[f64]) -> Result<PolicySample> {
        let cache = self.net.forward_cached(input)?;
        let out = cache.output();
        let d = self.action_dim;
        let mean = out[..d].to_vec();
        let raw_log_std = &out[d..2 * d];
        let clamped: Vec<bool> = raw_log_std
            .iter()
            .map(|l| *l < LOG_STD_MIN || *l > LOG_STD_MAX)
            .collect();
        let log_std: Vec<f64> = raw_log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        let mut pre_tanh = Vec::with_capacity(d);
        let mut action = Vec::with_capacity(d);
        let mut log_prob = 0.0;
        for j in 0..d {
            let std = log_std[j].exp();
            let u = mean[j] + std * eps[j];
            pre_tanh.push(u);
            action.push(self.action_max * u.tanh());
            log_prob += -HALF_LN_2PI - log_std[j] - 0.5 * eps[j] * eps[j];
            log_prob -= ln_one_minus_tanh_sq(u) + self.action_max.ln();
        }
        Ok(PolicySample {
            action,
            pre_tanh,
            eps: eps.to_vec(),
            mean,
            log_std,
            clamped,
            log_prob,
            cache,
        })
    }

    /// Parameter gradients of `L = Σ_j dl_da[j]·a_j + beta·log π(a|s)` through
    /// the reparameterized sample. Callers choose signs: a pathwise SAC loss
    /// is `dl_da = −∂Q/∂a`, `beta = temperature`.
    pub fn backprop_sample(
        &self,
        sample: &PolicySample,
        dl_da: &[f64],
        beta: f64,
    ) -> Result<MlpGrads> {
        let d = self.action_dim;
        let mut upstream = vec![0.0; 2 * d];
        for j in 0..d {
            let t = sample.pre_tanh[j].tanh();
            let std = sample.log_std[j].exp();
            // dL/du: action path through the squash plus the log-prob correction.
            let du = dl_da[j] * self.action_max * (1.0 - t * t) + beta * 2.0 * t;
            upstream[j] = du;
            // log-std head: reparameterized path (u = mean + std·ε) plus the
            // direct −log_std term; a hard clamp stops the gradient.
            if !sample.clamped[j] {
                upstream[d + j] = du * std * sample.eps[j] - beta;
            }
        }
        let (grads, _) = self.net.backward(&sample.cache, &upstream)?;
        Ok(grads)
    }
}

/// Recompute the log-probability of a stored sample; shared by tests.
#[cfg(test)]
pub(crate) fn log_prob_of(action_max: f64, eps: &[f64], log_std: &[f64], pre_tanh: &[f64]) -> f64 {
    let mut lp = 0.0;
    for j in 0..eps.len() {
        lp += -HALF_LN_2PI - log_std[j] - 0.5 * eps[j] * eps[j];
        lp -= ln_one_minus_tanh_sq(pre_tanh[j]) + action_max.ln();
    }
    lp
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rcmdp::child_rng;

    fn make_policy(seed: u64) -> GaussianPolicy {
        let mut rng = child_rng(seed, 0);
        let net = Mlp::init(&[4, 16, 2], Activation::Relu, &mut rng);
        GaussianPolicy::new(net, 1, 0.05)
    }

    #[test]
    fn actions_respect_bounds() {
        let policy = make_policy(30);
        let mut rng = child_rng(30, 1);
        for _ in 0..200 {
            let input: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let s = policy.sample(&input, &mut rng).unwrap();
            assert!(s.action[0].abs() <= 0.05);
            assert!(s.log_prob.is_finite());
        }
    }

    #[test]
    fn mean_action_is_deterministic() {
        let policy = make_policy(31);
        let input = [0.1, -0.2, 0.3, 0.4];
        assert_eq!(
            policy.mean_action(&input).unwrap(),
            policy.mean_action(&input).unwrap()
        );
    }

    #[test]
    fn log_prob_matches_recomputation() {
        let policy = make_policy(32);
        let mut rng = child_rng(32, 1);
        let input = [0.5, 0.1, -0.7, 0.2];
        let s = policy.sample(&input, &mut rng).unwrap();
        let lp = log_prob_of(0.05, &s.eps, &s.log_std, &s.pre_tanh);
        assert!((lp - s.log_prob).abs() < 1e-12);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        // L(φ) = Σ c_j·a_j(φ) + β·logπ(φ) with eps fixed.
        let policy = make_policy(33);
        let mut rng = child_rng(33, 1);
        let input = [0.3, -0.8, 0.2, 0.9];
        let eps = [0.37];
        let dl_da = [1.7];
        let beta = 0.25;

        let s = policy.sample_with_eps(&input, &eps).unwrap();
        let grads = policy.backprop_sample(&s, &dl_da, beta).unwrap();
        let mut analytic = Vec::new();
        grads.for_each(|g| analytic.push(g));

        let loss = |p: &GaussianPolicy| {
            let s = p.sample_with_eps(&input, &eps).unwrap();
            dl_da[0] * s.action[0] + beta * s.log_prob
        };

        let h = 1e-6;
        let n = policy.net.n_params();
        for idx in 0..n {
            let mut plus = policy.clone();
            let mut minus = policy.clone();
            let mut k = 0;
            plus.net.for_each_param_mut(|w| {
                if k == idx {
                    *w += h;
                }
                k += 1;
            });
            k = 0;
            minus.net.for_each_param_mut(|w| {
                if k == idx {
                    *w -= h;
                }
                k += 1;
            });
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
            assert!(
                (analytic[idx] - fd).abs() / denom < 1e-3,
                "param {idx}: analytic {} vs fd {fd}",
                analytic[idx]
            );
        }
        let _ = &mut rng;
    }
}
