//! Soft actor-critic core: twin (or REDQ) context-conditioned critics with
//! entropy-regularized targets, the pathwise actor update, and automatic
//! temperature tuning.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::SirsaError;
use crate::nn::{
    adam_step, polyak_update, Activation, AdamParams, AdamState, GaussianPolicy, Mlp, MlpGrads,
};
use crate::Result;

/// One replay transition encoded for gradient steps. The critic always sees
/// the true training context; the actor sees whatever its algorithm
/// conditions on.
#[derive(Debug, Clone)]
pub struct EncodedTransition {
    pub obs: [f64; 3],
    pub action: f64,
    pub reward: f64,
    pub next_obs: [f64; 3],
    pub done: bool,
    /// Normalized true-context features for the critic.
    pub critic_ctx: Vec<f64>,
    /// Actor conditioning at s.
    pub actor_cond: Vec<f64>,
    /// Actor conditioning at s' (used for target actions).
    pub actor_cond_next: Vec<f64>,
}

/// Entropy temperature with optional automatic tuning toward a target entropy.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Temperature {
    log_temp: f64,
    target_entropy: f64,
    auto: bool,
    lr: f64,
    m: f64,
    v: f64,
    step: u64,
}

impl Temperature {
    pub fn new(initial: f64, target_entropy: f64, auto: bool, lr: f64) -> Self {
        Self {
            log_temp: initial.max(1e-8).ln(),
            target_entropy,
            auto,
            lr,
            m: 0.0,
            v: 0.0,
            step: 0,
        }
    }

    pub fn value(&self) -> f64 {
        self.log_temp.exp()
    }

    /// Adam step on the dual objective; pushes entropy toward the target.
    pub fn update(&mut self, mean_log_prob: f64) {
        if !self.auto {
            return;
        }
        let g = -(mean_log_prob + self.target_entropy);
        self.step += 1;
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.step as i32));
        let v_hat = self.v / (1.0 - b2.powi(self.step as i32));
        self.log_temp -= self.lr * m_hat / (v_hat.sqrt() + eps);
        self.log_temp = self.log_temp.clamp(-12.0, 4.0);
    }
}

/// Critic ensemble with lagged target copies. Two critics by default; more
/// with REDQ, which computes targets from the minimum over a random
/// subsample of two.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriticBank {
    pub(crate) critics: Vec<Mlp>,
    pub(crate) targets: Vec<Mlp>,
    opts: Vec<AdamState>,
    pub redq: bool,
}

impl CriticBank {
    pub fn new(
        n_critics: usize,
        in_dim: usize,
        hidden: &[usize],
        activation: Activation,
        adam: AdamParams,
        redq: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if n_critics < 2 {
            return Err(SirsaError::InvalidConfig(format!(
                "critic bank needs ≥ 2 critics, got {n_critics}"
            )));
        }
        let mut dims = vec![in_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let critics: Vec<Mlp> = (0..n_critics)
            .map(|_| Mlp::init(&dims, activation, rng))
            .collect();
        let targets = critics.clone();
        let opts = critics.iter().map(|c| AdamState::new(c, adam)).collect();
        Ok(Self {
            critics,
            targets,
            opts,
            redq,
        })
    }

    pub fn n_critics(&self) -> usize {
        self.critics.len()
    }

    pub fn in_dim(&self) -> usize {
        self.critics[0].in_dim()
    }

    /// Minimum Q over all critics.
    pub fn q_min(&self, input: &[f64]) -> Result<f64> {
        let mut best = f64::INFINITY;
        for c in &self.critics {
            best = best.min(c.forward(input)?[0]);
        }
        Ok(best)
    }

    /// Minimum Q and its input gradient (through the argmin critic).
    pub fn q_min_grad_input(&self, input: &[f64]) -> Result<(f64, Vec<f64>)> {
        let mut best = f64::INFINITY;
        let mut best_cache = None;
        let mut best_idx = 0;
        for (i, c) in self.critics.iter().enumerate() {
            let cache = c.forward_cached(input)?;
            let q = cache.output()[0];
            if q < best {
                best = q;
                best_cache = Some(cache);
                best_idx = i;
            }
        }
        let cache = best_cache.expect("bank is non-empty");
        let (_, dx) = self.critics[best_idx].backward(&cache, &[1.0])?;
        Ok((best, dx))
    }

    /// Minimum target-network Q over the given critic indices.
    fn target_min(&self, input: &[f64], indices: &[usize]) -> Result<f64> {
        let mut best = f64::INFINITY;
        for &i in indices {
            best = best.min(self.targets[i].forward(input)?[0]);
        }
        Ok(best)
    }

    pub fn all_finite(&self) -> bool {
        self.critics.iter().chain(self.targets.iter()).all(Mlp::all_finite)
    }
}

/// One gradient step on every critic toward the entropy-regularized target
/// `y = r + γ(1−done)(min Q_targ(s', a', c) − temp·log π(a'|s'))`, followed by
/// a Polyak update of the target copies. Returns the mean squared Bellman
/// error per critic.
#[allow(clippy::too_many_arguments)]
pub fn critic_update(
    bank: &mut CriticBank,
    actor: &GaussianPolicy,
    temperature: f64,
    batch: &[EncodedTransition],
    gamma: f64,
    tau: f64,
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(SirsaError::EmptyInput("critic_update batch".into()));
    }
    let m = bank.n_critics();
    // REDQ: one subsample of two target critics per update.
    let target_indices: Vec<usize> = if bank.redq {
        let a = rng.gen_range(0..m);
        let mut b = rng.gen_range(0..m - 1);
        if b >= a {
            b += 1;
        }
        vec![a, b]
    } else {
        (0..m).collect()
    };

    let inv = 1.0 / batch.len() as f64;
    let mut grads: Vec<MlpGrads> = bank.critics.iter().map(MlpGrads::zeros_like).collect();
    let mut loss = 0.0;
    for t in batch {
        let target = if t.done {
            t.reward
        } else {
            let next_in = build_input(&t.next_obs, &t.actor_cond_next);
            let next_sample = actor.sample(&next_in, rng)?;
            let next_q_in = critic_in(&t.next_obs, next_sample.action[0], actor, &t.critic_ctx);
            let v = bank.target_min(&next_q_in, &target_indices)?
                - temperature * next_sample.log_prob;
            t.reward + gamma * v
        };
        if !target.is_finite() {
            return Err(SirsaError::Numerical(format!(
                "non-finite critic target {target}"
            )));
        }
        let q_in = critic_in(&t.obs, t.action, actor, &t.critic_ctx);
        for (i, critic) in bank.critics.iter().enumerate() {
            let cache = critic.forward_cached(&q_in)?;
            let delta = cache.output()[0] - target;
            loss += 0.5 * delta * delta * inv;
            let (g, _) = critic.backward(&cache, &[delta * inv])?;
            grads[i].add_assign(&g);
        }
    }
    for ((critic, g), opt) in bank
        .critics
        .iter_mut()
        .zip(&grads)
        .zip(bank.opts.iter_mut())
    {
        adam_step(critic, g, opt)?;
    }
    for (target, critic) in bank.targets.iter_mut().zip(&bank.critics) {
        polyak_update(target, critic, tau);
    }
    Ok(loss / m as f64)
}

/// Pathwise SAC actor step: ascend `min_i Q_i(s, a, c) − temp·log π(a|s)` with
/// the reparameterized action, then tune the temperature. Returns the actor
/// loss (negated objective).
pub fn actor_update_sac(
    bank: &CriticBank,
    actor: &mut GaussianPolicy,
    actor_opt: &mut AdamState,
    temp: &mut Temperature,
    batch: &[EncodedTransition],
    rng: &mut impl Rng,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(SirsaError::EmptyInput("actor_update_sac batch".into()));
    }
    let inv = 1.0 / batch.len() as f64;
    let temperature = temp.value();
    let mut total = MlpGrads::zeros_like(&actor.net);
    let mut loss = 0.0;
    let mut mean_log_prob = 0.0;
    for t in batch {
        let input = build_input(&t.obs, &t.actor_cond);
        let sample = actor.sample(&input, rng)?;
        let q_in = critic_in(&t.obs, sample.action[0], actor, &t.critic_ctx);
        let (q, dq_dinput) = bank.q_min_grad_input(&q_in)?;
        // Action features are scaled by 1/a_max inside the critic input.
        let dq_da = dq_dinput[3] / actor.action_max;
        let mut g = actor.backprop_sample(&sample, &[-dq_da], temperature)?;
        g.scale(inv);
        total.add_assign(&g);
        loss += (temperature * sample.log_prob - q) * inv;
        mean_log_prob += sample.log_prob * inv;
    }
    adam_step(&mut actor.net, &total, actor_opt)?;
    temp.update(mean_log_prob);
    Ok(loss)
}

fn build_input(obs: &[f64; 3], cond: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(3 + cond.len());
    f.extend_from_slice(obs);
    f.extend_from_slice(cond);
    f
}

fn critic_in(obs: &[f64; 3], action: f64, actor: &GaussianPolicy, critic_ctx: &[f64]) -> Vec<f64> {
    let mut f = Vec::with_capacity(4 + critic_ctx.len());
    f.extend_from_slice(obs);
    f.push(action / actor.action_max);
    f.extend_from_slice(critic_ctx);
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use crate::rcmdp::child_rng;

    fn small_actor(cond_dim: usize, seed: u64) -> GaussianPolicy {
        let mut rng = child_rng(seed, 0);
        let mut net = Mlp::init(&[3 + cond_dim, 32, 32, 2], Activation::Relu, &mut rng);
        net.scale_output_layer(0.01);
        GaussianPolicy::new(net, 1, 0.05)
    }

    fn batch_of(reward: f64, done: bool, n: usize) -> Vec<EncodedTransition> {
        (0..n)
            .map(|_| EncodedTransition {
                obs: [0.1, 0.0, 0.0],
                action: 0.01,
                reward,
                next_obs: [0.2, 0.0, 0.0],
                done,
                critic_ctx: vec![0.5],
                actor_cond: vec![0.5, 0.25],
                actor_cond_next: vec![0.5, 0.25],
            })
            .collect()
    }

    #[test]
    fn gamma_zero_converges_to_immediate_reward() {
        let mut rng = child_rng(70, 0);
        let actor = small_actor(2, 70);
        let mut bank = CriticBank::new(
            2,
            5,
            &[32, 32],
            Activation::Relu,
            AdamParams::with_lr(3e-3),
            false,
            &mut rng,
        )
        .unwrap();
        let batch = batch_of(1.0, false, 16);
        for _ in 0..800 {
            critic_update(&mut bank, &actor, 0.0, &batch, 0.0, 0.01, &mut rng).unwrap();
        }
        let q_in = critic_in(&[0.1, 0.0, 0.0], 0.01, &actor, &[0.5]);
        let q = bank.q_min(&q_in).unwrap();
        assert!((q - 1.0).abs() < 1e-2, "q = {q}");
    }

    #[test]
    fn zero_reward_stays_finite() {
        let mut rng = child_rng(71, 0);
        let actor = small_actor(2, 71);
        let mut bank = CriticBank::new(
            2,
            5,
            &[16, 16],
            Activation::Relu,
            AdamParams::default(),
            false,
            &mut rng,
        )
        .unwrap();
        let batch = batch_of(0.0, false, 8);
        for _ in 0..200 {
            critic_update(&mut bank, &actor, 0.1, &batch, 0.99, 0.005, &mut rng).unwrap();
        }
        assert!(bank.all_finite());
    }

    #[test]
    fn redq_with_two_critics_matches_twin_minimum() {
        // With M = 2 the random 2-subsample is always {0, 1}, so the REDQ
        // target reduces to the twin-critic minimum. Terminal transitions
        // keep the RNG streams aligned (no target-action sampling), making
        // the reduction bit-exact.
        let mut rng_a = child_rng(72, 0);
        let mut rng_b = child_rng(72, 0);
        let actor = small_actor(2, 72);
        let make = |rng: &mut crate::rcmdp::ExperimentRng| {
            CriticBank::new(
                2,
                5,
                &[16],
                Activation::Relu,
                AdamParams::default(),
                false,
                rng,
            )
            .unwrap()
        };
        let mut twin = make(&mut rng_a);
        let mut redq = make(&mut rng_b);
        redq.redq = true;
        let batch = batch_of(0.5, true, 8);
        for _ in 0..50 {
            critic_update(&mut twin, &actor, 0.05, &batch, 0.9, 0.01, &mut rng_a).unwrap();
            critic_update(&mut redq, &actor, 0.05, &batch, 0.9, 0.01, &mut rng_b).unwrap();
        }
        assert_eq!(twin.critics, redq.critics);
    }

    #[test]
    fn analytic_quadratic_critic_pulls_actor_mean() {
        // Fit the critics to Q = −100(a − 0.03)² first, then run actor
        // updates against the frozen bank: the mean should approach 0.03.
        let mut rng = child_rng(73, 0);
        let mut actor = small_actor(2, 73);
        let mut bank = CriticBank::new(
            2,
            5,
            &[32, 32],
            Activation::Relu,
            AdamParams::with_lr(1e-3),
            false,
            &mut rng,
        )
        .unwrap();
        // Supervised critic fit: y = −(a − 0.03)², a ∈ [−a_max, a_max].
        for _ in 0..3000 {
            let batch: Vec<EncodedTransition> = (0..16)
                .map(|_| {
                    let a = rng.gen_range(-0.05..0.05);
                    EncodedTransition {
                        obs: [0.1, 0.0, 0.0],
                        action: a,
                        reward: -(a - 0.03) * (a - 0.03) * 100.0,
                        next_obs: [0.1, 0.0, 0.0],
                        done: true,
                        critic_ctx: vec![0.5],
                        actor_cond: vec![0.5, 0.0],
                        actor_cond_next: vec![0.5, 0.0],
                    }
                })
                .collect();
            critic_update(&mut bank, &actor, 0.0, &batch, 0.99, 0.01, &mut rng).unwrap();
        }
        let mut actor_opt = AdamState::new(&actor.net, AdamParams::with_lr(3e-3));
        let mut temp = Temperature::new(1e-6, -1.0, false, 3e-4);
        let batch = batch_of(0.0, true, 16);
        let batch: Vec<EncodedTransition> = batch
            .into_iter()
            .map(|mut t| {
                t.actor_cond = vec![0.5, 0.0];
                t
            })
            .collect();
        for _ in 0..2000 {
            actor_update_sac(&mut bank, &mut actor, &mut actor_opt, &mut temp, &batch, &mut rng)
                .unwrap();
        }
        let a = actor
            .mean_action(&[0.1, 0.0, 0.0, 0.5, 0.0])
            .unwrap()[0];
        assert!((a - 0.03).abs() < 0.02, "actor mean {a}");
    }

    #[test]
    fn zero_critic_maximizes_entropy() {
        // Start from a deliberately narrow policy (log-std ≈ −3); with a zero
        // critic the entropy bonus alone must widen it substantially.
        let mut rng = child_rng(74, 0);
        let mut actor = small_actor(2, 74);
        let n = actor.net.n_params();
        let mut idx = 0;
        actor.net.for_each_param_mut(|w| {
            idx += 1;
            if idx == n {
                *w = -3.0; // log-std head bias
            }
        });
        let bank = {
            let mut b = CriticBank::new(
                2,
                5,
                &[8],
                Activation::Relu,
                AdamParams::default(),
                false,
                &mut rng,
            )
            .unwrap();
            for c in b.critics.iter_mut() {
                *c = Mlp::zeros(&[5, 8, 1], Activation::Relu);
            }
            b
        };
        let mut actor_opt = AdamState::new(&actor.net, AdamParams::with_lr(1e-2));
        let mut temp = Temperature::new(0.2, -1.0, false, 3e-4);
        let batch = batch_of(0.0, true, 8);
        let input = [0.1, 0.0, 0.0, 0.5, 0.25];
        let before = actor.sample_with_eps(&input, &[0.0]).unwrap().log_std[0];
        for _ in 0..500 {
            actor_update_sac(&bank, &mut actor, &mut actor_opt, &mut temp, &batch, &mut rng)
                .unwrap();
        }
        let after = actor.sample_with_eps(&input, &[0.0]).unwrap().log_std[0];
        assert!(
            after > before + 0.5,
            "log-std should rise: {before} -> {after}"
        );
    }

    #[test]
    fn updates_deterministic_under_seed() {
        let run = || {
            let mut rng = child_rng(75, 0);
            let mut actor = small_actor(2, 75);
            let mut bank = CriticBank::new(
                2,
                5,
                &[16],
                Activation::Relu,
                AdamParams::default(),
                false,
                &mut rng,
            )
            .unwrap();
            let mut actor_opt = AdamState::new(&actor.net, AdamParams::default());
            let mut temp = Temperature::new(0.1, -1.0, true, 3e-4);
            let batch = batch_of(0.3, false, 8);
            for _ in 0..20 {
                critic_update(&mut bank, &actor, temp.value(), &batch, 0.99, 0.005, &mut rng)
                    .unwrap();
                actor_update_sac(&mut bank, &mut actor, &mut actor_opt, &mut temp, &batch, &mut rng)
                    .unwrap();
            }
            (actor.net, temp.value())
        };
        let (net_a, t_a) = run();
        let (net_b, t_b) = run();
        assert_eq!(net_a, net_b);
        assert_eq!(t_a, t_b);
    }
}
