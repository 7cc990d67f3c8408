//! VaR/CVaR estimation and the Monte-Carlo CVaR policy gradient.
//!
//! The empirical estimators act on per-context Q-values: sort ascending, take
//! the rank-⌊αN⌋ element (VaR) or the mean of the lowest ⌊αN⌋ (CVaR). The
//! policy gradient averages the pathwise critic gradient over the ⌊αN⌋
//! worst-performing contexts sampled from an uncertainty set. A closed-form
//! Gaussian CVaR backs the WCPG baselines.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SirsaError;
use crate::nn::{GaussianPolicy, MlpGrads};
use crate::rcmdp::{sample_context_uniform, UncertaintySet};
use crate::Result;

/// CVaR configuration: risk level α and Monte-Carlo sample count N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskConfig {
    pub alpha: f64,
    pub n_samples: usize,
}

impl RiskConfig {
    pub fn new(alpha: f64, n_samples: usize) -> Result<Self> {
        let cfg = Self { alpha, n_samples };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if self.tail_count() < 1 {
            return Err(SirsaError::InvalidConfig(format!(
                "⌊αN⌋ must be ≥ 1 (α = {}, N = {})",
                self.alpha, self.n_samples
            )));
        }
        Ok(())
    }

    /// ⌊αN⌋, the number of tail samples the estimators keep.
    pub fn tail_count(&self) -> usize {
        (self.alpha * self.n_samples as f64).floor() as usize
    }
}

fn tail_count_for(values_len: usize, alpha: f64) -> Result<usize> {
    if values_len == 0 {
        return Err(SirsaError::EmptyInput("empirical risk over empty list".into()));
    }
    let k = (alpha * values_len as f64).floor() as usize;
    if k < 1 {
        return Err(SirsaError::InvalidConfig(format!(
            "⌊αN⌋ must be ≥ 1 (α = {alpha}, N = {values_len})"
        )));
    }
    Ok(k.min(values_len))
}

fn sorted_ascending(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    v
}

/// Empirical value-at-risk: the rank-⌊αN⌋ order statistic (1-indexed).
pub fn empirical_var(values: &[f64], alpha: f64) -> Result<f64> {
    let k = tail_count_for(values.len(), alpha)?;
    Ok(sorted_ascending(values)[k - 1])
}

/// Empirical CVaR: the mean of the ⌊αN⌋ smallest values.
pub fn empirical_cvar(values: &[f64], alpha: f64) -> Result<f64> {
    let k = tail_count_for(values.len(), alpha)?;
    let sorted = sorted_ascending(values);
    Ok(sorted[..k].iter().sum::<f64>() / k as f64)
}

/// Standard normal CDF `Φ(x) = ½(1 + erf(x/√2))`.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Standard normal density.
pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Inverse standard normal CDF, bisection refined by Newton steps to 1e-10.
pub fn std_normal_cdf_inverse(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(SirsaError::InvalidConfig(format!(
            "inverse CDF needs p in (0, 1), got {p}"
        )));
    }
    let (mut lo, mut hi) = (-12.0_f64, 12.0_f64);
    let mut x = 0.0;
    for _ in 0..80 {
        x = 0.5 * (lo + hi);
        if std_normal_cdf(x) < p {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo < 1e-8 {
            break;
        }
    }
    for _ in 0..4 {
        let f = std_normal_cdf(x) - p;
        let d = std_normal_pdf(x);
        if d <= 0.0 {
            break;
        }
        let next = x - f / d;
        if (next - x).abs() < 1e-12 {
            x = next;
            break;
        }
        x = next;
    }
    Ok(x)
}

/// Closed-form lower-tail CVaR of a Gaussian: `mean − φ(Φ⁻¹(α))/α · std`.
///
/// `literal_ratio` switches to the ratio `φ(α)/Φ(α)` instead of
/// `φ(Φ⁻¹(α))/α`; kept for compatibility experiments, not used by default.
pub fn gaussian_cvar_closed_form(
    q_mean: f64,
    q_var: f64,
    alpha: f64,
    literal_ratio: bool,
) -> Result<f64> {
    if q_var < 0.0 {
        return Err(SirsaError::InvalidConfig(format!(
            "variance must be non-negative, got {q_var}"
        )));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(SirsaError::InvalidConfig(format!(
            "alpha must be in (0, 1], got {alpha}"
        )));
    }
    if alpha >= 1.0 || q_var == 0.0 {
        return Ok(q_mean);
    }
    let ratio = if literal_ratio {
        std_normal_pdf(alpha) / std_normal_cdf(alpha)
    } else {
        let z = std_normal_cdf_inverse(alpha)?;
        std_normal_pdf(z) / alpha
    };
    Ok(q_mean - ratio * q_var.sqrt())
}

/// A context-conditioned critic exposing `Q(s, a, c)` and its action gradient.
pub trait ContextCritic {
    fn q_value(&self, state: &[f64], action: &[f64], context: &[f64]) -> Result<f64>;
    /// Q and ∂Q/∂a in one evaluation.
    fn q_and_grad_action(
        &self,
        state: &[f64],
        action: &[f64],
        context: &[f64],
    ) -> Result<(f64, Vec<f64>)>;
}

/// One actor-update entry: observation plus the conditioning features the
/// actor input expects after the observation.
#[derive(Debug, Clone)]
pub struct ActorInput {
    pub observation: Vec<f64>,
    pub conditioning: Vec<f64>,
}

impl ActorInput {
    pub fn features(&self) -> Vec<f64> {
        let mut f = self.observation.clone();
        f.extend_from_slice(&self.conditioning);
        f
    }
}

/// Diagnostics from one CVaR gradient evaluation.
#[derive(Debug, Clone, Default)]
pub struct CvarGradStats {
    pub mean_cvar: f64,
    pub mean_var: f64,
    pub mean_log_prob: f64,
}

/// Monte-Carlo CVaR policy gradient (ascent direction).
///
/// For each state: draw one reparameterized action, sample `N` contexts from
/// that state's uncertainty set, rank them by `Q(s, a, c̃)` (ties broken by
/// sample index), and average the pathwise critic gradient over the ⌊αN⌋
/// lowest-Q contexts. With `entropy_temp > 0` the SAC entropy bonus
/// `−temp·log π` joins the objective. Returns the mean ascent gradient over
/// the batch.
pub fn cvar_actor_gradient(
    critic: &dyn ContextCritic,
    actor: &GaussianPolicy,
    states: &[ActorInput],
    sets: &[UncertaintySet],
    config: &RiskConfig,
    entropy_temp: f64,
    rng: &mut impl Rng,
) -> Result<(MlpGrads, CvarGradStats)> {
    config.validate()?;
    if states.is_empty() {
        return Err(SirsaError::EmptyInput("cvar_actor_gradient batch".into()));
    }
    if sets.len() != states.len() && sets.len() != 1 {
        return Err(SirsaError::DimensionMismatch {
            expected: states.len(),
            got: sets.len(),
        });
    }
    let k = config.tail_count();
    let full_tail = k >= config.n_samples;
    let mut total = MlpGrads::zeros_like(&actor.net);
    let mut stats = CvarGradStats::default();
    for (i, entry) in states.iter().enumerate() {
        let set = if sets.len() == 1 { &sets[0] } else { &sets[i] };
        let input = entry.features();
        let sample = actor.sample(&input, rng)?;

        let mut dq_da = vec![0.0; actor.action_dim];
        let mut cvar = 0.0;
        if full_tail {
            // ⌊αN⌋ = N: every context is in the tail, so sorting is a no-op
            // and value and gradient come from one fused evaluation.
            let mut var = f64::NEG_INFINITY;
            for _ in 0..config.n_samples {
                let c = sample_context_uniform(set, rng);
                let (q, g) =
                    critic.q_and_grad_action(&entry.observation, &sample.action, c.as_slice())?;
                if !q.is_finite() {
                    return Err(SirsaError::Numerical(format!(
                        "critic returned non-finite Q = {q}"
                    )));
                }
                cvar += q;
                var = var.max(q);
                for (acc, gi) in dq_da.iter_mut().zip(&g) {
                    *acc += gi / k as f64;
                }
            }
            stats.mean_var += var;
        } else {
            let mut scored: Vec<(f64, usize, Vec<f64>)> = Vec::with_capacity(config.n_samples);
            for idx in 0..config.n_samples {
                let c = sample_context_uniform(set, rng);
                let q = critic.q_value(&entry.observation, &sample.action, c.as_slice())?;
                if !q.is_finite() {
                    return Err(SirsaError::Numerical(format!(
                        "critic returned non-finite Q = {q}"
                    )));
                }
                scored.push((q, idx, c.0));
            }
            scored.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));

            stats.mean_var += scored[k - 1].0;
            for (q, _, c) in scored.iter().take(k) {
                cvar += q;
                let (_, g) = critic.q_and_grad_action(&entry.observation, &sample.action, c)?;
                for (acc, gi) in dq_da.iter_mut().zip(&g) {
                    *acc += gi / k as f64;
                }
            }
        }
        stats.mean_cvar += cvar / k as f64;
        stats.mean_log_prob += sample.log_prob;

        // Ascent on CVaR − temp·logπ ⇒ loss −CVaR + temp·logπ, negated below.
        let dl_da: Vec<f64> = dq_da.iter().map(|g| -g).collect();
        let mut grads = actor.backprop_sample(&sample, &dl_da, entropy_temp)?;
        grads.scale(-1.0 / states.len() as f64);
        total.add_assign(&grads);
    }
    let n = states.len() as f64;
    stats.mean_cvar /= n;
    stats.mean_var /= n;
    stats.mean_log_prob /= n;
    Ok((total, stats))
}
