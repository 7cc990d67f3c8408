//! Training algorithms: SIRSA, its system-identification ablation, and the
//! robust-RL baselines it is compared against.
//!
//! All methods share one actor-critic core (a context-conditioned critic and
//! a squashed-Gaussian actor); they differ in what the actor conditions on,
//! how batches are assembled, and which objective drives the actor after the
//! pre-training phase.

mod runtime;
mod sac;
mod trainer;
mod wcpg;

pub use runtime::PolicyRuntime;
pub use sac::{actor_update_sac, critic_update, CriticBank, EncodedTransition, Temperature};
pub use trainer::{TrainLogRow, TrainedArtifacts, Trainer, TrainingConfig};
pub use wcpg::{actor_update_wcpg, variance_net_update};

use serde::{Deserialize, Serialize};

use crate::env::EnvVariant;
use crate::error::SirsaError;
use crate::rcmdp::{ContextSpace, ContextVector, UncertaintySet};
use crate::Result;

/// Which training algorithm a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Recursive set filtering + CVaR actor after the phase switch.
    Sirsa,
    /// SIRSA with the CVaR objective replaced by the α = 1 expectation.
    SystemId,
    /// Unconditioned policy trained on the α-worst percentile of all
    /// trajectories.
    Epopt,
    /// Set-conditioned policy with per-set percentile filtering.
    SetEpopt,
    /// α-conditioned policy with a closed-form Gaussian CVaR objective over
    /// the maximal uncertainty set.
    Wcpg,
    /// WCPG conditioned additionally on the episode's uncertainty set.
    SetWcpg,
    /// Context-conditioned policy given the true context (upper reference).
    Oracle,
    /// The oracle network evaluated as an ensemble over sampled contexts.
    PolicyEnsemble,
}

impl Algorithm {
    pub const ALL: [Algorithm; 8] = [
        Algorithm::Sirsa,
        Algorithm::SystemId,
        Algorithm::Epopt,
        Algorithm::SetEpopt,
        Algorithm::Wcpg,
        Algorithm::SetWcpg,
        Algorithm::Oracle,
        Algorithm::PolicyEnsemble,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Sirsa => "sirsa",
            Algorithm::SystemId => "system_id",
            Algorithm::Epopt => "epopt",
            Algorithm::SetEpopt => "set_epopt",
            Algorithm::Wcpg => "wcpg",
            Algorithm::SetWcpg => "set_wcpg",
            Algorithm::Oracle => "oracle",
            Algorithm::PolicyEnsemble => "policy_ensemble",
        }
    }

    /// Runs the recursive system-identification filter online.
    pub fn uses_filter(self) -> bool {
        matches!(self, Algorithm::Sirsa | Algorithm::SystemId)
    }

    /// Applies EPOpt percentile batch filtering, and over which pool.
    pub fn epopt_scope(self) -> Option<EpoptScope> {
        match self {
            Algorithm::Epopt => Some(EpoptScope::Union),
            Algorithm::SetEpopt => Some(EpoptScope::PerSet),
            _ => None,
        }
    }

    /// Trains a Q-variance approximator and uses the closed-form CVaR.
    pub fn uses_variance_net(self) -> bool {
        matches!(self, Algorithm::Wcpg | Algorithm::SetWcpg)
    }

    /// Switches the actor to the Monte-Carlo CVaR objective after the
    /// phase threshold.
    pub fn has_cvar_phase(self) -> bool {
        matches!(self, Algorithm::Sirsa | Algorithm::SystemId)
    }

    /// Width of the actor conditioning features for context dimension `d`.
    pub fn conditioning_dim(self, d: usize) -> usize {
        match self {
            Algorithm::Sirsa | Algorithm::SystemId | Algorithm::SetEpopt => 2 * d,
            Algorithm::Epopt => 0,
            Algorithm::Wcpg => 1,
            Algorithm::SetWcpg => 1 + 2 * d,
            Algorithm::Oracle | Algorithm::PolicyEnsemble => d,
        }
    }
}

/// Pool the EPOpt filter sorts over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpoptScope {
    Union,
    PerSet,
}

/// Algorithm selection plus its hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub algorithm: Algorithm,
    /// CVaR level (SIRSA/WCPG objectives, EPOpt filter fraction).
    pub alpha: f64,
    /// Monte-Carlo CVaR sample count N.
    pub n_cvar_samples: usize,
    /// System-identification ensemble size B.
    pub n_members: usize,
    /// Gradient-step index at which the actor objective switches phase.
    pub t_threshold: u64,
    /// Random-subsample-of-2 critic targets.
    pub redq: bool,
    /// Number of critics M (2 unless REDQ).
    pub n_critics: usize,
    /// Policy-ensemble context count N_ens.
    pub n_ensemble_policies: usize,
    /// History length H for the system-id ensemble.
    pub history_len: usize,
}

impl PolicySpec {
    pub fn defaults_for(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            alpha: match algorithm {
                Algorithm::Sirsa => 0.25,
                _ => 1.0,
            },
            n_cvar_samples: 50,
            n_members: 4,
            t_threshold: 25_000,
            redq: false,
            n_critics: 2,
            n_ensemble_policies: 5,
            history_len: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if (self.alpha * self.n_cvar_samples as f64).floor() < 1.0 {
            return Err(SirsaError::InvalidConfig(format!(
                "⌊αN⌋ must be ≥ 1 (alpha = {}, N = {})",
                self.alpha, self.n_cvar_samples
            )));
        }
        if self.n_members < 2 {
            return Err(SirsaError::InvalidConfig(format!(
                "ensemble size must be ≥ 2, got {}",
                self.n_members
            )));
        }
        if self.n_critics < 2 {
            return Err(SirsaError::InvalidConfig(format!(
                "critic count must be ≥ 2, got {}",
                self.n_critics
            )));
        }
        if self.redq && self.n_critics < 2 {
            return Err(SirsaError::InvalidConfig("REDQ needs M ≥ 2".into()));
        }
        if self.n_ensemble_policies == 0 {
            return Err(SirsaError::InvalidConfig(
                "n_ensemble_policies must be positive".into(),
            ));
        }
        if self.history_len == 0 {
            return Err(SirsaError::InvalidConfig("history_len must be ≥ 1".into()));
        }
        Ok(())
    }
}

/// Feature encoding shared by training and evaluation: observations stay raw,
/// actions are scaled to [−1, 1], contexts and set parameters are normalized
/// against the variant's nominal range.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureCodec {
    pub variant: EnvVariant,
    pub space: ContextSpace,
    pub action_max: f64,
}

impl FeatureCodec {
    pub fn new(variant: EnvVariant, action_max: f64) -> Self {
        Self {
            variant,
            space: variant.context_space(),
            action_max,
        }
    }

    pub fn context_dim(&self) -> usize {
        self.space.dim()
    }

    /// Normalized context features.
    pub fn context_features(&self, c: &ContextVector) -> Vec<f64> {
        self.space.normalize(c.as_slice())
    }

    /// Normalized (center, width) features of a set.
    pub fn set_features(&self, set: &UncertaintySet) -> Vec<f64> {
        let mut f = self.space.normalize(&set.center);
        f.extend(self.space.normalize_width(&set.width));
        f
    }

    /// Critic input `[obs, a/a_max, c_norm]`.
    pub fn critic_input(&self, obs: &[f64; 3], action: f64, critic_ctx: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(4 + critic_ctx.len());
        f.extend_from_slice(obs);
        f.push(action / self.action_max);
        f.extend_from_slice(critic_ctx);
        f
    }

    /// Actor input `[obs, conditioning]`.
    pub fn actor_input(&self, obs: &[f64; 3], conditioning: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(3 + conditioning.len());
        f.extend_from_slice(obs);
        f.extend_from_slice(conditioning);
        f
    }

    /// Variance-net input `[obs, a/a_max, set features]`.
    pub fn variance_input(&self, obs: &[f64; 3], action: f64, set_features: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(4 + set_features.len());
        f.extend_from_slice(obs);
        f.push(action / self.action_max);
        f.extend_from_slice(set_features);
        f
    }
}
