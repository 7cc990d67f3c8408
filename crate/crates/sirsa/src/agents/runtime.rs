//! Deterministic evaluation-time acting for every algorithm.
//!
//! A runtime bundles the trained actor with whatever its algorithm needs at
//! test time: the recursive filter (SIRSA / System ID), the fixed prior set
//! (Set-EPOpt / Set-WCPG), an α level (WCPG family), sampled contexts
//! (policy ensemble), or the true context (oracle). Evaluation actions are
//! policy means; no parameters are ever mutated.

use crate::env::{EnvVariant, PointMassState, RolloutPolicy, Transition, ACTION_MAX};
use crate::nn::GaussianPolicy;
use crate::rcmdp::{sample_context_uniform, ContextVector, ExperimentRng, UncertaintySet};
use crate::sysid::{HistoryWindow, SysIdEnsemble};

use super::trainer::TrainedArtifacts;
use super::{Algorithm, FeatureCodec};

/// Read-only policy bundle with per-episode adaptation state.
#[derive(Debug, Clone)]
pub struct PolicyRuntime {
    pub algorithm: Algorithm,
    pub variant: EnvVariant,
    codec: FeatureCodec,
    actor: GaussianPolicy,
    ensemble: Option<SysIdEnsemble>,
    /// α input for the WCPG family at evaluation.
    pub eval_alpha: f64,
    n_ensemble_policies: usize,
    history_len: usize,

    prior: Option<UncertaintySet>,
    filtered: Option<UncertaintySet>,
    window: HistoryWindow,
    sampled_contexts: Vec<ContextVector>,
    true_context: Option<ContextVector>,
    /// Filtered-set trace of the current episode (diagnostics).
    pub xi_trace: Vec<UncertaintySet>,
}

impl PolicyRuntime {
    pub fn from_artifacts(artifacts: &TrainedArtifacts) -> Self {
        Self {
            algorithm: artifacts.spec.algorithm,
            variant: artifacts.variant,
            codec: FeatureCodec::new(artifacts.variant, ACTION_MAX),
            actor: artifacts.actor.clone(),
            ensemble: artifacts.ensemble.clone(),
            eval_alpha: artifacts.spec.alpha,
            n_ensemble_policies: artifacts.spec.n_ensemble_policies,
            history_len: artifacts.spec.history_len,
            prior: None,
            filtered: None,
            window: HistoryWindow::new(artifacts.spec.history_len.max(1)),
            sampled_contexts: Vec::new(),
            true_context: None,
            xi_trace: Vec::new(),
        }
    }

    pub fn with_eval_alpha(mut self, alpha: f64) -> Self {
        self.eval_alpha = alpha;
        self
    }

    /// Provide the ground-truth context; only the oracle conditions on it.
    pub fn set_true_context(&mut self, c: Option<ContextVector>) {
        self.true_context = c;
    }

    /// Mean action of the context-conditioned policy at an explicit context.
    pub fn oracle_act(&self, c: &ContextVector, state: &PointMassState) -> f64 {
        let input = self
            .codec
            .actor_input(&state.to_vec(), &self.codec.context_features(c));
        self.actor.mean_action(&input).expect("actor input shape")[0]
    }

    /// Mean over the per-context policy means of the sampled context set.
    fn ensemble_policy_act(&self, state: &PointMassState) -> f64 {
        let n = self.sampled_contexts.len() as f64;
        self.sampled_contexts
            .iter()
            .map(|c| self.oracle_act(c, state))
            .sum::<f64>()
            / n
    }

    /// The set the policy currently conditions on.
    pub fn current_set(&self) -> Option<&UncertaintySet> {
        if self.algorithm.uses_filter() {
            self.filtered.as_ref()
        } else {
            self.prior.as_ref()
        }
    }
}

impl RolloutPolicy for PolicyRuntime {
    fn begin_episode(&mut self, prior: &UncertaintySet, rng: &mut ExperimentRng) {
        self.prior = Some(prior.clone());
        self.filtered = Some(prior.clone());
        self.window = HistoryWindow::new(self.history_len.max(1));
        self.xi_trace = vec![prior.clone()];
        self.sampled_contexts.clear();
        if self.algorithm == Algorithm::PolicyEnsemble {
            self.sampled_contexts = (0..self.n_ensemble_policies)
                .map(|_| sample_context_uniform(prior, rng))
                .collect();
        }
    }

    fn act(&mut self, state: &PointMassState, _rng: &mut ExperimentRng) -> f64 {
        let cond: Vec<f64> = match self.algorithm {
            Algorithm::Sirsa | Algorithm::SystemId => self
                .codec
                .set_features(self.filtered.as_ref().expect("begin_episode not called")),
            Algorithm::SetEpopt => self
                .codec
                .set_features(self.prior.as_ref().expect("begin_episode not called")),
            Algorithm::Epopt => Vec::new(),
            Algorithm::Wcpg => vec![self.eval_alpha],
            Algorithm::SetWcpg => {
                let mut f = vec![self.eval_alpha];
                f.extend(
                    self.codec
                        .set_features(self.prior.as_ref().expect("begin_episode not called")),
                );
                f
            }
            Algorithm::Oracle => {
                let c = self
                    .true_context
                    .clone()
                    .expect("oracle evaluation needs the true context");
                return self.oracle_act(&c, state);
            }
            Algorithm::PolicyEnsemble => return self.ensemble_policy_act(state),
        };
        let input = self.codec.actor_input(&state.to_vec(), &cond);
        self.actor.mean_action(&input).expect("actor input shape")[0]
    }

    fn observe(&mut self, transition: &Transition) {
        if !self.algorithm.uses_filter() {
            return;
        }
        self.window.push(transition.clone());
        if let (Some(ens), Some(prev)) = (&self.ensemble, &self.filtered) {
            let next = ens
                .recursive_filter_step(prev, &self.window)
                .expect("filter step on valid shapes");
            self.xi_trace.push(next.clone());
            self.filtered = Some(next);
        }
    }
}
