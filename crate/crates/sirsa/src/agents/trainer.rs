//! The shared training loop: collect one episode, then run gradient steps on
//! the critic, the actor (phase-dependent objective), the system-id ensemble,
//! and the Q-variance net, as the algorithm requires.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{self, EnvVariant, Transition, ACTION_MAX, HORIZON};
use crate::error::SirsaError;
use crate::nn::{
    adam_step, Activation, AdamParams, AdamState, GaussianPolicy, Mlp,
};
use crate::rcmdp::{child_rng, ContextVector, ExperimentRng, TaskSuite, UncertaintySet};
use crate::replay::{ReplayBuffers, StoredTransition};
use crate::risk::{cvar_actor_gradient, ActorInput, ContextCritic, RiskConfig};
use crate::sysid::{HistoryWindow, SysIdConfig, SysIdEnsemble, SysIdSample};
use crate::Result;

use super::sac::{actor_update_sac, critic_update, CriticBank, EncodedTransition, Temperature};
use super::wcpg::{actor_update_wcpg, variance_net_update, WcpgTransition};
use super::{Algorithm, EpoptScope, FeatureCodec, PolicySpec};

/// Optimization hyperparameters shared by every algorithm.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    /// Total gradient steps.
    pub budget: u64,
    pub batch_size: usize,
    /// Batch size for the Monte-Carlo CVaR actor step (N critic evaluations
    /// per state make it the most expensive update).
    pub cvar_batch_size: usize,
    /// Gradient steps run after each collected episode.
    pub grad_steps_per_episode: usize,
    /// Initial episodes collected with uniform random actions.
    pub warmup_episodes: u64,
    /// Minimum stored transitions before updates start.
    pub min_buffer: usize,
    pub replay_capacity_per_context: usize,
    pub gamma: f64,
    pub tau: f64,
    pub learning_rate: f64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub temperature_initial: f64,
    pub temperature_lr: f64,
    pub auto_temperature: bool,
    /// Keep the entropy bonus inside the CVaR-phase actor objective.
    pub entropy_in_cvar: bool,
    /// Probability of conditioning the phase-1 actor update on the
    /// ground-truth degenerate set (μ = c, σ = 0) instead of the filtered set.
    pub degenerate_set_mix: f64,
    /// Context samples per Monte-Carlo Q-variance target.
    pub variance_context_samples: usize,
    pub log_every: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            budget: 50_000,
            batch_size: 128,
            cvar_batch_size: 64,
            grad_steps_per_episode: 50,
            warmup_episodes: 5,
            min_buffer: 500,
            replay_capacity_per_context: 4_000,
            gamma: 0.99,
            tau: 0.005,
            learning_rate: 3e-4,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            temperature_initial: 0.2,
            temperature_lr: 3e-4,
            auto_temperature: true,
            entropy_in_cvar: true,
            degenerate_set_mix: 0.5,
            variance_context_samples: 50,
            log_every: 500,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, spec: &PolicySpec) -> Result<()> {
        if self.budget < spec.t_threshold {
            return Err(SirsaError::InvalidConfig(format!(
                "budget {} must be ≥ t_threshold {}",
                self.budget, spec.t_threshold
            )));
        }
        if self.batch_size == 0 || self.cvar_batch_size == 0 {
            return Err(SirsaError::InvalidConfig("batch sizes must be positive".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "gamma must be in [0, 1), got {}",
                self.gamma
            )));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "tau must be in (0, 1], got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.degenerate_set_mix) {
            return Err(SirsaError::InvalidConfig(
                "degenerate_set_mix must be in [0, 1]".into(),
            ));
        }
        if self.variance_context_samples < 2 {
            return Err(SirsaError::InvalidConfig(
                "variance_context_samples must be ≥ 2".into(),
            ));
        }
        Ok(())
    }
}

/// One training-log line (CSV row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainLogRow {
    pub iteration: u64,
    pub phase: u8,
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub ensemble_loss: f64,
    pub variance_loss: f64,
    pub mean_episode_return: f64,
    pub temperature: f64,
}

/// Everything a finished (or aborted) run leaves behind.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainedArtifacts {
    pub spec: PolicySpec,
    pub training: TrainingConfig,
    pub variant: EnvVariant,
    pub seed: u64,
    pub iteration: u64,
    pub episodes: u64,
    pub actor: GaussianPolicy,
    pub actor_opt: AdamState,
    pub bank: CriticBank,
    pub temperature: Temperature,
    pub ensemble: Option<SysIdEnsemble>,
    pub variance_net: Option<Mlp>,
    pub variance_opt: Option<AdamState>,
    pub negative_variance_clamps: u64,
    pub rng: ExperimentRng,
}

/// Adapter exposing the critic bank as a raw-context critic for the
/// Monte-Carlo CVaR gradient.
struct BankContextCritic<'a> {
    bank: &'a CriticBank,
    codec: &'a FeatureCodec,
}

impl ContextCritic for BankContextCritic<'_> {
    fn q_value(&self, state: &[f64], action: &[f64], context: &[f64]) -> Result<f64> {
        let obs = [state[0], state[1], state[2]];
        let ctx = self.codec.space.normalize(context);
        self.bank.q_min(&self.codec.critic_input(&obs, action[0], &ctx))
    }

    fn q_and_grad_action(
        &self,
        state: &[f64],
        action: &[f64],
        context: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        let obs = [state[0], state[1], state[2]];
        let ctx = self.codec.space.normalize(context);
        let (q, dinput) =
            self.bank
                .q_min_grad_input(&self.codec.critic_input(&obs, action[0], &ctx))?;
        Ok((q, vec![dinput[3] / self.codec.action_max]))
    }
}

/// Trainer for one (algorithm, suite, seed) run.
pub struct Trainer {
    spec: PolicySpec,
    cfg: TrainingConfig,
    variant: EnvVariant,
    suite: TaskSuite,
    codec: FeatureCodec,
    pairs: Vec<(usize, ContextVector)>,
    seed: u64,

    actor: GaussianPolicy,
    actor_opt: AdamState,
    bank: CriticBank,
    temperature: Temperature,
    ensemble: Option<SysIdEnsemble>,
    variance_net: Option<Mlp>,
    variance_opt: Option<AdamState>,

    buffers: ReplayBuffers,
    rng: ExperimentRng,
    iteration: u64,
    episode_counter: u64,
    recent_returns: VecDeque<f64>,
    negative_variance_clamps: u64,
    pub log: Vec<TrainLogRow>,
}

impl Trainer {
    pub fn new(
        spec: PolicySpec,
        cfg: TrainingConfig,
        variant: EnvVariant,
        suite: TaskSuite,
        seed: u64,
    ) -> Result<Self> {
        spec.validate()?;
        cfg.validate(&spec)?;
        let codec = FeatureCodec::new(variant, ACTION_MAX);
        let d = codec.context_dim();
        if suite.distribution.context_space.dim() != d {
            return Err(SirsaError::Suite(format!(
                "suite context dimension {} does not match variant {:?}",
                suite.distribution.context_space.dim(),
                variant
            )));
        }
        let pairs: Vec<(usize, ContextVector)> = suite
            .train_pairs()
            .into_iter()
            .map(|(i, c)| (i, c.clone()))
            .collect();
        if pairs.is_empty() {
            return Err(SirsaError::Suite("suite has no training contexts".into()));
        }
        let mut rng = child_rng(seed, 1);
        let adam = AdamParams::with_lr(cfg.learning_rate);

        let cond_dim = spec.algorithm.conditioning_dim(d);
        let mut actor_dims = vec![3 + cond_dim];
        actor_dims.extend_from_slice(&cfg.hidden);
        actor_dims.push(2);
        let mut actor_net = Mlp::init(&actor_dims, cfg.activation, &mut rng);
        actor_net.scale_output_layer(0.01);
        let actor = GaussianPolicy::new(actor_net, 1, ACTION_MAX);
        let actor_opt = AdamState::new(&actor.net, adam);

        let n_critics = if spec.redq { spec.n_critics } else { 2 };
        let bank = CriticBank::new(
            n_critics,
            3 + 1 + d,
            &cfg.hidden,
            cfg.activation,
            adam,
            spec.redq,
            &mut rng,
        )?;

        let ensemble = if spec.algorithm.uses_filter() {
            Some(SysIdEnsemble::new(
                SysIdConfig {
                    n_members: spec.n_members,
                    history_len: spec.history_len,
                    hidden: cfg.hidden.clone(),
                    activation: cfg.activation,
                    adam,
                },
                codec.space.clone(),
                &mut rng,
            )?)
        } else {
            None
        };

        let (variance_net, variance_opt) = if spec.algorithm.uses_variance_net() {
            let mut dims = vec![3 + 1 + 2 * d];
            dims.extend_from_slice(&cfg.hidden);
            dims.push(1);
            let net = Mlp::init(&dims, cfg.activation, &mut rng);
            let opt = AdamState::new(&net, adam);
            (Some(net), Some(opt))
        } else {
            (None, None)
        };

        // Target entropy −dim(A) in normalized action units; the ln(a_max)
        // term shifts it into raw units (tanh-squashed actions cannot exceed
        // the entropy of Uniform(−a_max, a_max)).
        let temperature = Temperature::new(
            cfg.temperature_initial,
            ACTION_MAX.ln() - 1.0,
            cfg.auto_temperature,
            cfg.temperature_lr,
        );
        let buffers = ReplayBuffers::new(pairs.len(), cfg.replay_capacity_per_context);

        Ok(Self {
            spec,
            cfg,
            variant,
            suite,
            codec,
            pairs,
            seed,
            actor,
            actor_opt,
            bank,
            temperature,
            ensemble,
            variance_net,
            variance_opt,
            buffers,
            rng,
            iteration: 0,
            episode_counter: 0,
            recent_returns: VecDeque::with_capacity(32),
            negative_variance_clamps: 0,
            log: Vec::new(),
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn episodes(&self) -> u64 {
        self.episode_counter
    }

    fn in_cvar_phase(&self) -> bool {
        self.iteration >= self.spec.t_threshold
    }

    /// Collect one episode in a uniformly sampled training environment; the
    /// online filter runs during collection for the algorithms that have one.
    pub fn collect_episode(&mut self) -> Result<()> {
        let pair_idx = self.rng.gen_range(0..self.pairs.len());
        let (set_idx, context) = self.pairs[pair_idx].clone();
        // Plain EPOpt and WCPG train against the maximal set; everything else
        // uses the episode's parent training set.
        let xi0 = match self.spec.algorithm {
            Algorithm::Epopt | Algorithm::Wcpg => UncertaintySet::spanning(&self.codec.space),
            _ => self.suite.train_sets[set_idx].clone(),
        };
        let params = self.variant.decode(&context)?;
        let episode_alpha = if self.spec.algorithm.uses_variance_net() {
            self.rng.gen_range(1e-6..1.0)
        } else {
            self.spec.alpha
        };
        let warmup = self.episode_counter < self.cfg.warmup_episodes;

        let mut xi = xi0.clone();
        let mut window = HistoryWindow::new(self.spec.history_len);
        let mut state = env::reset(&params);
        let mut steps: Vec<(Transition, UncertaintySet, UncertaintySet, Vec<f64>)> =
            Vec::with_capacity(HORIZON);
        for t in 0..HORIZON {
            let cond = conditioning_for(
                self.spec.algorithm,
                &self.codec,
                &xi,
                &xi0,
                &context,
                episode_alpha,
            );
            let action = if warmup {
                self.rng.gen_range(-ACTION_MAX..=ACTION_MAX)
            } else {
                let input = self.codec.actor_input(&state.to_vec(), &cond);
                self.actor.sample(&input, &mut self.rng)?.action[0]
            };
            let mut tr = env::step(&state, action, &params)?;
            tr.done = t + 1 == HORIZON;
            window.push(tr.clone());
            let history = window.features();
            let xi_next = match &self.ensemble {
                Some(ens) => ens.recursive_filter_step(&xi, &window)?,
                None => xi.clone(),
            };
            state = tr.next_state;
            steps.push((tr, xi.clone(), xi_next.clone(), history));
            xi = xi_next;
        }

        let episode_return: f64 = steps.iter().map(|(tr, ..)| tr.reward).sum();
        let episode_id = self.episode_counter;
        for (tr, xi_prior, xi_next, history) in steps {
            self.buffers.push(
                pair_idx,
                StoredTransition::new(
                    tr.state.to_vec(),
                    tr.action,
                    tr.reward,
                    tr.next_state.to_vec(),
                    tr.done,
                    context.clone(),
                    xi_prior,
                    xi_next,
                    history,
                    set_idx,
                    episode_id,
                    episode_return,
                ),
            );
        }
        self.episode_counter += 1;
        if self.recent_returns.len() == 20 {
            self.recent_returns.pop_front();
        }
        self.recent_returns.push_back(episode_return);
        Ok(())
    }

    /// One gradient step: critic, phase-appropriate actor objective, and the
    /// auxiliary models.
    pub fn gradient_step(&mut self) -> Result<()> {
        let phase2 = self.in_cvar_phase();
        let algorithm = self.spec.algorithm;
        let step_alpha = if algorithm.uses_variance_net() {
            self.rng.gen_range(1e-6..1.0)
        } else {
            self.spec.alpha
        };

        // Assemble and snapshot the batch (borrow of the buffers ends here).
        let (encoded, cvar_states, cvar_sets, sysid_batch, wcpg_batch) = {
            let refs: Vec<&StoredTransition> = match algorithm.epopt_scope() {
                Some(EpoptScope::Union) => self.buffers.epopt_filter_batch(
                    self.cfg.batch_size,
                    self.spec.alpha,
                    &mut self.rng,
                )?,
                Some(EpoptScope::PerSet) => {
                    let set_idx = self.rng.gen_range(0..self.suite.train_sets.len());
                    self.buffers.epopt_filter_batch_in_set(
                        set_idx,
                        self.cfg.batch_size,
                        self.spec.alpha,
                        &mut self.rng,
                    )?
                }
                None => self
                    .buffers
                    .sample_uniform(self.cfg.batch_size, &mut self.rng)?,
            };

            let mut encoded = Vec::with_capacity(refs.len());
            let mut cvar_states = Vec::new();
            let mut cvar_sets = Vec::new();
            let mut sysid_batch = Vec::new();
            let mut wcpg_batch = Vec::new();
            let use_cvar = algorithm.has_cvar_phase() && phase2;
            for (i, t) in refs.iter().enumerate() {
                let critic_ctx = self.codec.context_features(&t.context);
                let (mut actor_cond, actor_cond_next) = match algorithm {
                    Algorithm::Sirsa | Algorithm::SystemId => (
                        self.codec.set_features(&t.xi_prior),
                        self.codec.set_features(&t.xi_next),
                    ),
                    Algorithm::SetEpopt => (
                        self.codec.set_features(&t.xi_prior),
                        self.codec.set_features(&t.xi_prior),
                    ),
                    Algorithm::Epopt => (Vec::new(), Vec::new()),
                    Algorithm::Wcpg => (vec![step_alpha], vec![step_alpha]),
                    Algorithm::SetWcpg => {
                        let mut f = vec![step_alpha];
                        f.extend(self.codec.set_features(&t.xi_prior));
                        (f.clone(), f)
                    }
                    Algorithm::Oracle | Algorithm::PolicyEnsemble => (
                        self.codec.context_features(&t.context),
                        self.codec.context_features(&t.context),
                    ),
                };
                // Phase-1 conditioning mix toward the ground-truth set.
                if algorithm.has_cvar_phase()
                    && !phase2
                    && self.rng.gen::<f64>() < self.cfg.degenerate_set_mix
                {
                    actor_cond =
                        self.codec.set_features(&UncertaintySet::degenerate(&t.context));
                }

                if use_cvar && i < self.cfg.cvar_batch_size {
                    cvar_states.push(ActorInput {
                        observation: t.observation.to_vec(),
                        conditioning: self.codec.set_features(&t.xi_prior),
                    });
                    cvar_sets.push(t.xi_prior.clone());
                }
                if self.ensemble.is_some() {
                    sysid_batch.push(SysIdSample {
                        prior: t.xi_prior.clone(),
                        history: t.history.clone(),
                        context: t.context.clone(),
                    });
                }
                let enc = EncodedTransition {
                    obs: t.observation,
                    action: t.action,
                    reward: t.reward,
                    next_obs: t.next_observation,
                    done: t.done,
                    critic_ctx,
                    actor_cond,
                    actor_cond_next,
                };
                if algorithm.uses_variance_net() {
                    wcpg_batch.push(WcpgTransition {
                        enc: enc.clone(),
                        set: t.xi_prior.clone(),
                        set_features: self.codec.set_features(&t.xi_prior),
                    });
                }
                encoded.push(enc);
            }
            (encoded, cvar_states, cvar_sets, sysid_batch, wcpg_batch)
        };

        let critic_loss = critic_update(
            &mut self.bank,
            &self.actor,
            self.temperature.value(),
            &encoded,
            self.cfg.gamma,
            self.cfg.tau,
            &mut self.rng,
        )?;

        let actor_loss = match (algorithm.has_cvar_phase(), algorithm.uses_variance_net(), phase2)
        {
            // Monte-Carlo CVaR over contexts from the stored filtered sets;
            // the System ID ablation runs the same path at α = 1.
            (true, _, true) => {
                let alpha = if algorithm == Algorithm::SystemId {
                    1.0
                } else {
                    self.spec.alpha
                };
                let risk_cfg = RiskConfig::new(alpha, self.spec.n_cvar_samples)?;
                let entropy_temp = if self.cfg.entropy_in_cvar {
                    self.temperature.value()
                } else {
                    0.0
                };
                let (mut grads, stats) = {
                    let critic = BankContextCritic {
                        bank: &self.bank,
                        codec: &self.codec,
                    };
                    cvar_actor_gradient(
                        &critic,
                        &self.actor,
                        &cvar_states,
                        &cvar_sets,
                        &risk_cfg,
                        entropy_temp,
                        &mut self.rng,
                    )?
                };
                grads.scale(-1.0); // ascent via descent optimizer
                adam_step(&mut self.actor.net, &grads, &mut self.actor_opt)?;
                self.temperature.update(stats.mean_log_prob);
                entropy_temp * stats.mean_log_prob - stats.mean_cvar
            }
            // Closed-form Gaussian CVaR with a per-step α draw.
            (_, true, true) => {
                let var_net = self.variance_net.as_ref().expect("wcpg variance net");
                actor_update_wcpg(
                    &self.bank,
                    var_net,
                    &mut self.actor,
                    &mut self.actor_opt,
                    &mut self.temperature,
                    &wcpg_batch,
                    step_alpha,
                    &self.codec,
                    &mut self.rng,
                    &mut self.negative_variance_clamps,
                )?
            }
            // Pre-training phase and purely SAC-based methods.
            _ => actor_update_sac(
                &self.bank,
                &mut self.actor,
                &mut self.actor_opt,
                &mut self.temperature,
                &encoded,
                &mut self.rng,
            )?,
        };

        let ensemble_loss = match &mut self.ensemble {
            Some(ens) => ens.ensemble_train_step(&sysid_batch, &mut self.rng)?,
            None => 0.0,
        };
        let variance_loss = match (&mut self.variance_net, &mut self.variance_opt) {
            (Some(net), Some(opt)) => variance_net_update(
                net,
                opt,
                &self.bank,
                &self.codec,
                &wcpg_batch,
                self.cfg.variance_context_samples,
                &mut self.rng,
            )?,
            _ => 0.0,
        };

        self.iteration += 1;
        if self.iteration % self.cfg.log_every == 0 || self.iteration == 1 {
            let mean_ret = if self.recent_returns.is_empty() {
                f64::NAN
            } else {
                self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64
            };
            self.log.push(TrainLogRow {
                iteration: self.iteration,
                phase: if phase2 { 2 } else { 1 },
                critic_loss,
                actor_loss,
                ensemble_loss,
                variance_loss,
                mean_episode_return: mean_ret,
                temperature: self.temperature.value(),
            });
        }
        Ok(())
    }

    /// Run the full budget: alternate episode collection and gradient steps.
    pub fn train(&mut self) -> Result<()> {
        while self.iteration < self.cfg.budget {
            self.collect_episode()?;
            if self.buffers.len() >= self.cfg.min_buffer.max(self.cfg.batch_size) {
                for _ in 0..self.cfg.grad_steps_per_episode {
                    if self.iteration >= self.cfg.budget {
                        break;
                    }
                    self.gradient_step()?;
                }
            }
        }
        if !self.actor.net.all_finite() || !self.bank.all_finite() {
            return Err(SirsaError::Numerical(
                "non-finite parameters after training".into(),
            ));
        }
        Ok(())
    }

    /// Snapshot of everything a checkpoint stores.
    pub fn artifacts(&self) -> TrainedArtifacts {
        TrainedArtifacts {
            spec: self.spec.clone(),
            training: self.cfg.clone(),
            variant: self.variant,
            seed: self.seed,
            iteration: self.iteration,
            episodes: self.episode_counter,
            actor: self.actor.clone(),
            actor_opt: self.actor_opt.clone(),
            bank: self.bank.clone(),
            temperature: self.temperature.clone(),
            ensemble: self.ensemble.clone(),
            variance_net: self.variance_net.clone(),
            variance_opt: self.variance_opt.clone(),
            negative_variance_clamps: self.negative_variance_clamps,
            rng: self.rng.clone(),
        }
    }

    pub fn mean_recent_return(&self) -> f64 {
        if self.recent_returns.is_empty() {
            f64::NAN
        } else {
            self.recent_returns.iter().sum::<f64>() / self.recent_returns.len() as f64
        }
    }
}

/// Actor conditioning used while collecting an episode.
fn conditioning_for(
    algorithm: Algorithm,
    codec: &FeatureCodec,
    xi_filtered: &UncertaintySet,
    xi0: &UncertaintySet,
    context: &ContextVector,
    episode_alpha: f64,
) -> Vec<f64> {
    match algorithm {
        Algorithm::Sirsa | Algorithm::SystemId => codec.set_features(xi_filtered),
        Algorithm::SetEpopt => codec.set_features(xi0),
        Algorithm::Epopt => Vec::new(),
        Algorithm::Wcpg => vec![episode_alpha],
        Algorithm::SetWcpg => {
            let mut f = vec![episode_alpha];
            f.extend(codec.set_features(xi0));
            f
        }
        Algorithm::Oracle | Algorithm::PolicyEnsemble => codec.context_features(context),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rcmdp::{make_task_suite, SetDistribution};

    fn tiny_suite(variant: EnvVariant, seed: u64) -> TaskSuite {
        let dist = SetDistribution::new(variant.context_space(), 0.25).unwrap();
        make_task_suite(&dist, 4, 2, 3, seed).unwrap()
    }

    fn smoke_cfg(budget: u64, threshold: u64) -> (TrainingConfig, PolicySpec) {
        let cfg = TrainingConfig {
            budget,
            batch_size: 16,
            cvar_batch_size: 4,
            grad_steps_per_episode: 10,
            warmup_episodes: 1,
            min_buffer: 50,
            hidden: vec![16, 16],
            log_every: 10,
            ..Default::default()
        };
        let mut spec = PolicySpec::defaults_for(Algorithm::Sirsa);
        spec.t_threshold = threshold;
        spec.n_cvar_samples = 10;
        (cfg, spec)
    }

    #[test]
    fn smoke_run_all_algorithms() {
        for algorithm in Algorithm::ALL {
            let variant = EnvVariant::ObstacleOnly;
            let (cfg, mut spec) = smoke_cfg(30, 15);
            spec.algorithm = algorithm;
            if algorithm == Algorithm::Epopt || algorithm == Algorithm::SetEpopt {
                spec.alpha = 0.5;
            }
            let suite = tiny_suite(variant, 100);
            let mut trainer = Trainer::new(spec, cfg, variant, suite, 7).unwrap();
            trainer.train().unwrap();
            assert_eq!(trainer.iteration(), 30);
            let artifacts = trainer.artifacts();
            assert!(artifacts.actor.net.all_finite());
            assert!(!trainer.log.is_empty());
        }
    }

    #[test]
    fn phase_switch_respects_threshold() {
        let variant = EnvVariant::ObstacleOnly;
        let (cfg, spec) = smoke_cfg(30, 15);
        let suite = tiny_suite(variant, 101);
        let mut trainer = Trainer::new(spec, cfg, variant, suite, 8).unwrap();
        trainer.train().unwrap();
        for row in &trainer.log {
            if row.iteration <= 15 {
                assert_eq!(row.phase, 1, "iteration {}", row.iteration);
            } else {
                assert_eq!(row.phase, 2, "iteration {}", row.iteration);
            }
        }
    }

    #[test]
    fn threshold_equal_budget_never_enters_cvar_phase() {
        let variant = EnvVariant::VelocityOnly;
        let (cfg, mut spec) = smoke_cfg(20, 20);
        spec.algorithm = Algorithm::SystemId;
        let suite = tiny_suite(variant, 102);
        let mut trainer = Trainer::new(spec, cfg, variant, suite, 9).unwrap();
        trainer.train().unwrap();
        assert!(trainer.log.iter().all(|r| r.phase == 1));
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let variant = EnvVariant::Combined;
            let (cfg, spec) = smoke_cfg(25, 12);
            let suite = tiny_suite(variant, 103);
            let mut trainer = Trainer::new(spec, cfg, variant, suite, 11).unwrap();
            trainer.train().unwrap();
            trainer.artifacts()
        };
        let a = run();
        let b = run();
        assert_eq!(a.actor.net, b.actor.net);
        assert_eq!(
            serde_json::to_string(&a.bank).unwrap(),
            serde_json::to_string(&b.bank).unwrap()
        );
    }

    #[test]
    fn budget_must_cover_threshold() {
        let variant = EnvVariant::ObstacleOnly;
        let (cfg, mut spec) = smoke_cfg(10, 20);
        spec.t_threshold = 20;
        let suite = tiny_suite(variant, 104);
        assert!(Trainer::new(spec, cfg, variant, suite, 1).is_err());
    }
}
