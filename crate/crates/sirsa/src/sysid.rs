//! Probabilistic system identification.
//!
//! An ensemble of B context predictors maps a prior uncertainty set and a
//! short transition history to a context estimate. Each training sample
//! trains exactly one member, drawn uniformly, so members disagree wherever
//! the data does not pin the answer down; the posterior set is the member
//! mean and per-dimension spread. At inference the posterior feeds back as
//! the next step's prior, shrinking the set for identifiable parameters and
//! leaving it wide for non-identifiable ones.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Transition;
use crate::error::SirsaError;
use crate::nn::{adam_step, Activation, AdamParams, AdamState, Mlp, MlpGrads};
use crate::rcmdp::{ContextSpace, ContextVector, UncertaintySet};
use crate::Result;

/// Fraction by which the posterior-center clamp widens the nominal context
/// space, so inference can track contexts outside a misspecified prior.
pub const CLAMP_WIDEN_FRACTION: f64 = 0.5;

/// Entropy-proxy guard for zero-width sets.
pub const PROXY_EPSILON: f64 = 1e-9;

/// Sliding window over the last `H` transitions, oldest first.
#[derive(Debug, Clone)]
pub struct HistoryWindow {
    capacity: usize,
    items: VecDeque<Transition>,
}

impl HistoryWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history window needs capacity ≥ 1");
        Self {
            capacity,
            items: VecDeque::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Number of real (non-padding) transitions currently held.
    pub fn n_valid(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Flat feature vector, zero-padded at the front while t < H.
    /// Per-transition layout is `(s, a, s')`, with the reward inserted after
    /// the action only for windows longer than one transition. The next state
    /// is encoded as its delta from the state: information-equivalent, and it
    /// keeps one-step dynamics (per-step velocity, collision onset) at a
    /// scale the predictors can resolve.
    pub fn features(&self) -> Vec<f64> {
        let with_reward = self.capacity > 1;
        let stride = Self::stride(self.capacity);
        let mut out = vec![0.0; self.capacity * stride];
        let pad = self.capacity - self.items.len();
        for (i, t) in self.items.iter().enumerate() {
            let base = (pad + i) * stride;
            let s = t.state.to_vec();
            let s2 = t.next_state.to_vec();
            let ds = [s2[0] - s[0], s2[1] - s[1], s2[2] - s[2]];
            out[base..base + 3].copy_from_slice(&s);
            out[base + 3] = t.action;
            if with_reward {
                out[base + 4] = t.reward;
                out[base + 5..base + 8].copy_from_slice(&ds);
            } else {
                out[base + 4..base + 7].copy_from_slice(&ds);
            }
        }
        out
    }

    /// Feature width per transition for a window of the given capacity.
    pub fn stride(capacity: usize) -> usize {
        if capacity > 1 {
            8
        } else {
            7
        }
    }

    /// Total feature width for a window of the given capacity.
    pub fn feature_dim(capacity: usize) -> usize {
        capacity * Self::stride(capacity)
    }
}

/// Ensemble hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SysIdConfig {
    /// Ensemble size B (≥ 2).
    pub n_members: usize,
    /// History length H.
    pub history_len: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub adam: AdamParams,
}

impl Default for SysIdConfig {
    fn default() -> Self {
        Self {
            n_members: 4,
            history_len: 1,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            adam: AdamParams::default(),
        }
    }
}

/// One supervised training example: prior set, history features, true context.
#[derive(Debug, Clone)]
pub struct SysIdSample {
    pub prior: UncertaintySet,
    pub history: Vec<f64>,
    pub context: ContextVector,
}

/// Ensemble of context predictors with shared layout and independent weights.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SysIdEnsemble {
    pub config: SysIdConfig,
    /// Nominal context range; set features are normalized against it.
    pub context_space: ContextSpace,
    /// Widened clamp bounds for posterior centers.
    clamp_space: ContextSpace,
    members: Vec<Mlp>,
    opt_states: Vec<AdamState>,
}

impl SysIdEnsemble {
    pub fn new(
        config: SysIdConfig,
        context_space: ContextSpace,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if config.n_members < 2 {
            return Err(SirsaError::InvalidConfig(format!(
                "ensemble needs B ≥ 2 members, got {}",
                config.n_members
            )));
        }
        if config.history_len < 1 {
            return Err(SirsaError::InvalidConfig("history_len must be ≥ 1".into()));
        }
        let d = context_space.dim();
        let in_dim = 2 * d + HistoryWindow::feature_dim(config.history_len);
        let mut dims = vec![in_dim];
        dims.extend_from_slice(&config.hidden);
        dims.push(d);
        let members: Vec<Mlp> = (0..config.n_members)
            .map(|_| Mlp::init(&dims, config.activation, rng))
            .collect();
        let opt_states = members
            .iter()
            .map(|m| AdamState::new(m, config.adam))
            .collect();
        let clamp_space = context_space.widened(CLAMP_WIDEN_FRACTION);
        Ok(Self {
            config,
            context_space,
            clamp_space,
            members,
            opt_states,
        })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn context_dim(&self) -> usize {
        self.context_space.dim()
    }

    fn build_input(&self, prior: &UncertaintySet, history: &[f64]) -> Vec<f64> {
        let mut input = self.context_space.normalize(&prior.center);
        input.extend(self.context_space.normalize_width(&prior.width));
        input.extend_from_slice(history);
        input
    }

    /// Raw-unit context prediction of every member, in member order.
    pub fn member_predictions(
        &self,
        prior: &UncertaintySet,
        history: &[f64],
    ) -> Result<Vec<Vec<f64>>> {
        let input = self.build_input(prior, history);
        self.members
            .iter()
            .map(|m| Ok(self.context_space.denormalize(&m.forward(&input)?)))
            .collect()
    }

    /// Posterior set: member mean and per-dimension population standard
    /// deviation (divisor B), with the center clamped to the widened range.
    pub fn infer_posterior(
        &self,
        prior: &UncertaintySet,
        history: &[f64],
    ) -> Result<UncertaintySet> {
        let preds = self.member_predictions(prior, history)?;
        let d = self.context_dim();
        let b = preds.len() as f64;
        let mut center = vec![0.0; d];
        for p in &preds {
            for (acc, v) in center.iter_mut().zip(p) {
                *acc += v / b;
            }
        }
        let mut width = vec![0.0; d];
        for p in &preds {
            for i in 0..d {
                let dev = p[i] - center[i];
                width[i] += dev * dev / b;
            }
        }
        for w in width.iter_mut() {
            *w = w.sqrt();
        }
        for i in 0..d {
            center[i] = center[i].clamp(self.clamp_space.lower[i], self.clamp_space.upper[i]);
        }
        Ok(UncertaintySet { center, width })
    }

    /// One recursive filter update: the previous posterior is the prior.
    /// With an empty history (t = 0) the set passes through unchanged.
    pub fn recursive_filter_step(
        &self,
        previous: &UncertaintySet,
        window: &HistoryWindow,
    ) -> Result<UncertaintySet> {
        if window.is_empty() {
            return Ok(previous.clone());
        }
        self.infer_posterior(previous, &window.features())
    }

    /// One gradient step of the ensemble loss: every sample trains exactly one
    /// member j ~ Unif(B). Returns the batch mean squared error (normalized
    /// context units).
    pub fn ensemble_train_step(
        &mut self,
        batch: &[SysIdSample],
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(SirsaError::EmptyInput("ensemble_train_step batch".into()));
        }
        let d = self.context_dim();
        let b = self.members.len();
        let mut grads: Vec<MlpGrads> = self.members.iter().map(MlpGrads::zeros_like).collect();
        let mut total_loss = 0.0;
        let inv_batch = 1.0 / batch.len() as f64;
        for sample in batch {
            let j = rng.gen_range(0..b);
            let input = self.build_input(&sample.prior, &sample.history);
            let cache = self.members[j].forward_cached(&input)?;
            let target = self.context_space.normalize(sample.context.as_slice());
            let pred = cache.output();
            let mut upstream = vec![0.0; d];
            let mut err_sq = 0.0;
            for i in 0..d {
                let e = pred[i] - target[i];
                err_sq += e * e / d as f64;
                upstream[i] = 2.0 * e / d as f64 * inv_batch;
            }
            total_loss += err_sq * inv_batch;
            let (g, _) = self.members[j].backward(&cache, &upstream)?;
            grads[j].add_assign(&g);
        }
        if !total_loss.is_finite() {
            return Err(SirsaError::Numerical(format!(
                "ensemble loss diverged: {total_loss}"
            )));
        }
        for (member, (g, opt)) in self
            .members
            .iter_mut()
            .zip(grads.iter().zip(self.opt_states.iter_mut()))
        {
            adam_step(member, g, opt)?;
        }
        Ok(total_loss)
    }
}

/// Entropy of the uniform box up to constants: `Σ_i log(2σ_i + ε)`.
pub fn identifiability_proxy(set: &UncertaintySet) -> f64 {
    set.width
        .iter()
        .map(|s| (2.0 * s + PROXY_EPSILON).ln())
        .sum()
}
