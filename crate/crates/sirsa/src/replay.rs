//! Per-context replay buffers with episode-return tags and EPOpt filtering.

use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};

use rand::Rng;

use crate::error::SirsaError;
use crate::rcmdp::{ContextVector, UncertaintySet};
use crate::Result;

/// One stored transition plus everything batch assembly needs: the true
/// context tag, the filtered set at collection time, the system-id history
/// features, and trajectory bookkeeping for EPOpt.
#[derive(Debug, Clone)]
pub struct StoredTransition {
    pub observation: [f64; 3],
    pub action: f64,
    pub reward: f64,
    pub next_observation: [f64; 3],
    pub done: bool,
    /// True context of the training environment.
    pub context: ContextVector,
    /// Uncertainty set the actor conditioned on when acting (Ξ_t).
    pub xi_prior: UncertaintySet,
    /// Filtered set after this transition (Ξ_{t+1}).
    pub xi_next: UncertaintySet,
    /// History features for the system-id ensemble at this step.
    pub history: Vec<f64>,
    /// Index of the training set the episode started from.
    pub set_index: usize,
    pub episode_id: u64,
    pub episode_return: f64,
    tag_hash: u64,
}

fn hash_f64s<H: Hasher>(h: &mut H, values: &[f64]) {
    for v in values {
        v.to_bits().hash(h);
    }
}

fn tag_hash_of(context: &ContextVector, xi: &UncertaintySet) -> u64 {
    let mut h = DefaultHasher::new();
    hash_f64s(&mut h, context.as_slice());
    hash_f64s(&mut h, &xi.center);
    hash_f64s(&mut h, &xi.width);
    h.finish()
}

impl StoredTransition {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        observation: [f64; 3],
        action: f64,
        reward: f64,
        next_observation: [f64; 3],
        done: bool,
        context: ContextVector,
        xi_prior: UncertaintySet,
        xi_next: UncertaintySet,
        history: Vec<f64>,
        set_index: usize,
        episode_id: u64,
        episode_return: f64,
    ) -> Self {
        let tag_hash = tag_hash_of(&context, &xi_prior);
        Self {
            observation,
            action,
            reward,
            next_observation,
            done,
            context,
            xi_prior,
            xi_next,
            history,
            set_index,
            episode_id,
            episode_return,
            tag_hash,
        }
    }

    /// True iff the context/set tags still match their insertion-time hash.
    pub fn tags_intact(&self) -> bool {
        tag_hash_of(&self.context, &self.xi_prior) == self.tag_hash
    }
}

/// Index of a transition: (context id, offset within that context's buffer).
pub type TransitionIndex = (usize, usize);

/// Bounded FIFO buffers, one per training context.
#[derive(Debug)]
pub struct ReplayBuffers {
    per_context: Vec<VecDeque<StoredTransition>>,
    capacity_per_context: usize,
    total: usize,
}

impl ReplayBuffers {
    pub fn new(n_contexts: usize, capacity_per_context: usize) -> Self {
        Self {
            per_context: (0..n_contexts).map(|_| VecDeque::new()).collect(),
            capacity_per_context,
            total: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Transitions currently stored for one training set index.
    pub fn len_in_set(&self, set_index: usize) -> usize {
        self.per_context
            .iter()
            .flatten()
            .filter(|t| t.set_index == set_index)
            .count()
    }

    pub fn push(&mut self, context_id: usize, transition: StoredTransition) {
        debug_assert!(transition.tags_intact());
        let buf = &mut self.per_context[context_id];
        if buf.len() == self.capacity_per_context {
            buf.pop_front();
            self.total -= 1;
        }
        buf.push_back(transition);
        self.total += 1;
    }

    pub fn get(&self, index: TransitionIndex) -> &StoredTransition {
        &self.per_context[index.0][index.1]
    }

    /// `n` indices drawn uniformly with replacement over the union of buffers.
    pub fn sample_indices_uniform(
        &self,
        n: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<TransitionIndex>> {
        if self.total == 0 {
            return Err(SirsaError::EmptyInput("replay buffers".into()));
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut flat = rng.gen_range(0..self.total);
            for (cid, buf) in self.per_context.iter().enumerate() {
                if flat < buf.len() {
                    out.push((cid, flat));
                    break;
                }
                flat -= buf.len();
            }
        }
        Ok(out)
    }

    /// Uniform batch over the union.
    pub fn sample_uniform(&self, n: usize, rng: &mut impl Rng) -> Result<Vec<&StoredTransition>> {
        let idx = self.sample_indices_uniform(n, rng)?;
        Ok(self.collect_refs(idx))
    }

    /// EPOpt batch filter: draw ⌈D/α⌉ tuples uniformly, sort by the return of
    /// the trajectory they came from (ties by episode id, then draw order),
    /// and keep the lowest D. Falls back to a plain uniform batch while the
    /// buffers hold fewer than ⌈D/α⌉ transitions.
    pub fn epopt_filter_batch(
        &self,
        batch_size: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<&StoredTransition>> {
        self.epopt_filter_impl(batch_size, alpha, None, rng)
    }

    /// EPOpt filter restricted to trajectories whose initial set matches
    /// `set_index`; the per-set variant used by Set-EPOpt.
    pub fn epopt_filter_batch_in_set(
        &self,
        set_index: usize,
        batch_size: usize,
        alpha: f64,
        rng: &mut impl Rng,
    ) -> Result<Vec<&StoredTransition>> {
        self.epopt_filter_impl(batch_size, alpha, Some(set_index), rng)
    }

    fn epopt_filter_impl(
        &self,
        batch_size: usize,
        alpha: f64,
        set_index: Option<usize>,
        rng: &mut impl Rng,
    ) -> Result<Vec<&StoredTransition>> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "EPOpt alpha must be in (0, 1], got {alpha}"
            )));
        }
        let draw = (batch_size as f64 / alpha).ceil() as usize;
        let candidates: Vec<TransitionIndex> = match set_index {
            None => {
                if self.total < draw {
                    return self.sample_uniform(batch_size, rng);
                }
                self.sample_indices_uniform(draw, rng)?
            }
            Some(set) => {
                // Index the set's transitions once, then draw with replacement.
                let pool: Vec<TransitionIndex> = self
                    .per_context
                    .iter()
                    .enumerate()
                    .flat_map(|(cid, buf)| {
                        buf.iter()
                            .enumerate()
                            .filter(|(_, t)| t.set_index == set)
                            .map(move |(off, _)| (cid, off))
                    })
                    .collect();
                if pool.len() < draw {
                    return self.sample_uniform(batch_size, rng);
                }
                (0..draw).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
            }
        };
        let mut scored: Vec<(f64, u64, usize, TransitionIndex)> = candidates
            .iter()
            .enumerate()
            .map(|(draw_order, &idx)| {
                let t = self.get(idx);
                (t.episode_return, t.episode_id, draw_order, idx)
            })
            .collect();
        scored.sort_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        Ok(self.collect_refs(
            scored
                .into_iter()
                .take(batch_size)
                .map(|(_, _, _, idx)| idx)
                .collect(),
        ))
    }

    fn collect_refs(&self, indices: Vec<TransitionIndex>) -> Vec<&StoredTransition> {
        indices
            .into_iter()
            .map(|idx| {
                let t = self.get(idx);
                debug_assert!(t.tags_intact(), "transition tags corrupted");
                t
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rcmdp::child_rng;

    fn transition(ep: u64, ret: f64, set_index: usize) -> StoredTransition {
        StoredTransition::new(
            [0.0, 0.0, 0.0],
            0.01,
            1.0,
            [0.08, 0.0, 0.0],
            false,
            ContextVector(vec![0.05]),
            UncertaintySet::new(vec![0.05], vec![0.01]).unwrap(),
            UncertaintySet::new(vec![0.05], vec![0.005]).unwrap(),
            vec![0.0; 7],
            set_index,
            ep,
            ret,
        )
    }

    fn filled_buffers(returns: &[f64]) -> ReplayBuffers {
        let mut buffers = ReplayBuffers::new(4, 1000);
        for (i, &ret) in returns.iter().enumerate() {
            buffers.push(i % 4, transition(i as u64, ret, i % 2));
        }
        buffers
    }

    #[test]
    fn capacity_is_fifo() {
        let mut buffers = ReplayBuffers::new(1, 3);
        for i in 0..5 {
            buffers.push(0, transition(i, i as f64, 0));
        }
        assert_eq!(buffers.len(), 3);
        assert_eq!(buffers.get((0, 0)).episode_id, 2);
    }

    #[test]
    fn alpha_one_is_plain_uniform_batch() {
        let buffers = filled_buffers(&(0..50).map(|i| i as f64).collect::<Vec<_>>());
        let mut rng_a = child_rng(60, 0);
        let mut rng_b = child_rng(60, 0);
        let filtered = buffers.epopt_filter_batch(10, 1.0, &mut rng_a).unwrap();
        let uniform = buffers.sample_uniform(10, &mut rng_b).unwrap();
        // α = 1 draws exactly D tuples; sorting cannot drop any of them.
        let mut f: Vec<u64> = filtered.iter().map(|t| t.episode_id).collect();
        let mut u: Vec<u64> = uniform.iter().map(|t| t.episode_id).collect();
        f.sort_unstable();
        u.sort_unstable();
        assert_eq!(f, u);
    }

    #[test]
    fn filter_matches_brute_force() {
        let returns: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        let buffers = filled_buffers(&returns);
        let mut rng = child_rng(61, 0);
        let mut oracle_rng = child_rng(61, 0);

        let batch = buffers.epopt_filter_batch(10, 0.5, &mut rng).unwrap();

        // Brute force: replicate the draw, sort by (return, episode id, order).
        let drawn = buffers.sample_indices_uniform(20, &mut oracle_rng).unwrap();
        let mut scored: Vec<(f64, u64)> = drawn
            .iter()
            .map(|&i| (buffers.get(i).episode_return, buffers.get(i).episode_id))
            .collect();
        scored.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<f64> = scored[..10].iter().map(|(r, _)| *r).collect();
        let got: Vec<f64> = batch.iter().map(|t| t.episode_return).collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn ties_resolve_deterministically() {
        let buffers = filled_buffers(&vec![5.0; 40]);
        let run = |seed| {
            let mut rng = child_rng(seed, 0);
            buffers
                .epopt_filter_batch(8, 0.5, &mut rng)
                .unwrap()
                .iter()
                .map(|t| t.episode_id)
                .collect::<Vec<_>>()
        };
        assert_eq!(run(62), run(62));
    }

    #[test]
    fn insufficient_data_defers_to_uniform() {
        let buffers = filled_buffers(&[1.0, 2.0, 3.0]);
        let mut rng = child_rng(63, 0);
        // Needs D/α = 40 tuples but only 3 exist: unfiltered batch of size D.
        let batch = buffers.epopt_filter_batch(10, 0.25, &mut rng).unwrap();
        assert_eq!(batch.len(), 10);
        let mut rng = child_rng(63, 1);
        assert!(ReplayBuffers::new(1, 10)
            .epopt_filter_batch(4, 0.5, &mut rng)
            .is_err());
    }

    #[test]
    fn per_set_filter_only_sees_matching_trajectories() {
        let returns: Vec<f64> = (1..=60).map(|i| i as f64).collect();
        let buffers = filled_buffers(&returns); // set_index = i % 2
        let mut rng = child_rng(64, 0);
        let batch = buffers
            .epopt_filter_batch_in_set(1, 8, 0.5, &mut rng)
            .unwrap();
        assert!(batch.iter().all(|t| t.set_index == 1));
    }

    #[test]
    fn tag_hash_detects_mutation() {
        let mut t = transition(0, 1.0, 0);
        assert!(t.tags_intact());
        t.context = ContextVector(vec![0.06]);
        assert!(!t.tags_intact());
    }
}
