//! Contexts, uncertainty sets, and task suites.
//!
//! A context is the hidden parameter vector selecting one MDP from a
//! contextual family. An uncertainty set is an axis-aligned box of plausible
//! contexts, parameterized by a center and per-dimension width; policies
//! condition on it and system identification refines it online. A task suite
//! bundles the training sets (with their observed training contexts) and the
//! held-out test sets used by the evaluation protocols.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::SirsaError;
use crate::Result;

/// Current on-disk schema version for [`TaskSuite`] files.
pub const SUITE_VERSION: u32 = 1;

/// Deterministic RNG used everywhere sampling happens.
pub type ExperimentRng = ChaCha12Rng;

/// Derive an independent child RNG stream from a base seed and a stream tag.
///
/// Streams for distinct tags never overlap, so parallel workers can share a
/// base seed without sharing state.
pub fn child_rng(seed: u64, stream: u64) -> ExperimentRng {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The hidden task parameter vector `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextVector(pub Vec<f64>);

impl ContextVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// The full range of admissible contexts, one closed interval per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSpace {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ContextSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(SirsaError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(lo, hi)| lo > hi) {
            return Err(SirsaError::InvalidConfig(
                "context space has lower > upper".into(),
            ));
        }
        Ok(Self { lower, upper })
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn midpoint(&self) -> ContextVector {
        ContextVector(
            self.lower
                .iter()
                .zip(&self.upper)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect(),
        )
    }

    pub fn half_range(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| 0.5 * (hi - lo))
            .collect()
    }

    pub fn span(&self, i: usize) -> f64 {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, c: &ContextVector) -> bool {
        c.dim() == self.dim()
            && c.0
                .iter()
                .enumerate()
                .all(|(i, v)| *v >= self.lower[i] && *v <= self.upper[i])
    }

    /// Widen each interval by `fraction` of its span on both ends.
    pub fn widened(&self, fraction: f64) -> ContextSpace {
        ContextSpace {
            lower: self
                .lower
                .iter()
                .enumerate()
                .map(|(i, lo)| lo - fraction * self.span(i))
                .collect(),
            upper: self
                .upper
                .iter()
                .enumerate()
                .map(|(i, hi)| hi + fraction * self.span(i))
                .collect(),
        }
    }

    /// Normalize a raw context coordinate into range units ([0,1] inside the space).
    pub fn normalize(&self, c: &[f64]) -> Vec<f64> {
        c.iter()
            .enumerate()
            .map(|(i, v)| {
                let span = self.span(i);
                if span > 0.0 {
                    (v - self.lower[i]) / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Normalize a per-dimension width into range units.
    pub fn normalize_width(&self, w: &[f64]) -> Vec<f64> {
        w.iter()
            .enumerate()
            .map(|(i, v)| {
                let span = self.span(i);
                if span > 0.0 {
                    v / span
                } else {
                    0.0
                }
            })
            .collect()
    }

    /// Map a normalized coordinate back to raw units.
    pub fn denormalize(&self, n: &[f64]) -> Vec<f64> {
        n.iter()
            .enumerate()
            .map(|(i, v)| self.lower[i] + v * self.span(i))
            .collect()
    }
}

/// A box uncertainty set over contexts: `c ∈ Ξ iff |c[i] − μ[i]| ≤ σ[i]` per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySet {
    /// Center μ.
    pub center: Vec<f64>,
    /// Per-dimension half-width σ (≥ 0).
    pub width: Vec<f64>,
}

impl UncertaintySet {
    pub fn new(center: Vec<f64>, width: Vec<f64>) -> Result<Self> {
        if center.len() != width.len() {
            return Err(SirsaError::DimensionMismatch {
                expected: center.len(),
                got: width.len(),
            });
        }
        if width.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(SirsaError::InvalidConfig(
                "uncertainty set width must be finite and non-negative".into(),
            ));
        }
        Ok(Self { center, width })
    }

    /// Degenerate set pinned to a single context (σ = 0).
    pub fn degenerate(c: &ContextVector) -> Self {
        Self {
            center: c.0.clone(),
            width: vec![0.0; c.dim()],
        }
    }

    /// The maximal set spanning a whole context space.
    pub fn spanning(space: &ContextSpace) -> Self {
        Self {
            center: space.midpoint().0,
            width: space.half_range(),
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }
}

/// Membership test for the box set (boundary inclusive).
pub fn set_contains(set: &UncertaintySet, c: &ContextVector) -> Result<bool> {
    if set.dim() != c.dim() {
        return Err(SirsaError::DimensionMismatch {
            expected: set.dim(),
            got: c.dim(),
        });
    }
    Ok(set
        .center
        .iter()
        .zip(&set.width)
        .zip(&c.0)
        .all(|((mu, sig), v)| (v - mu).abs() <= *sig))
}

/// Draw one context uniformly from the box set, independently per dimension.
pub fn sample_context_uniform(set: &UncertaintySet, rng: &mut impl Rng) -> ContextVector {
    ContextVector(
        set.center
            .iter()
            .zip(&set.width)
            .map(|(mu, sig)| {
                if *sig == 0.0 {
                    *mu
                } else {
                    rng.gen_range(mu - sig..=mu + sig)
                }
            })
            .collect(),
    )
}

/// Distribution over uncertainty sets: uniform centers inside the space with a
/// fixed width fraction, clipped inward so each set stays inside the space.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SetDistribution {
    pub context_space: ContextSpace,
    /// Set half-width as a fraction of the space half-range, in (0, 1].
    pub width_fraction: f64,
}

impl SetDistribution {
    pub fn new(context_space: ContextSpace, width_fraction: f64) -> Result<Self> {
        if !(width_fraction > 0.0 && width_fraction <= 1.0) {
            return Err(SirsaError::InvalidConfig(format!(
                "width_fraction must be in (0, 1], got {width_fraction}"
            )));
        }
        Ok(Self {
            context_space,
            width_fraction,
        })
    }
}

/// Sample one uncertainty set: center uniform over the space, width
/// `width_fraction × half-range`, then the center shifted inward until
/// `[μ−σ, μ+σ]` fits inside the space.
pub fn sample_set(dist: &SetDistribution, rng: &mut impl Rng) -> UncertaintySet {
    let space = &dist.context_space;
    let d = space.dim();
    let mut center = Vec::with_capacity(d);
    let mut width = Vec::with_capacity(d);
    for i in 0..d {
        let sigma = dist.width_fraction * 0.5 * space.span(i);
        let raw = if space.span(i) > 0.0 {
            rng.gen_range(space.lower[i]..=space.upper[i])
        } else {
            space.lower[i]
        };
        let (lo, hi) = (space.lower[i] + sigma, space.upper[i] - sigma);
        // A full-width set leaves a single admissible center: the midpoint.
        let mu = if lo >= hi {
            0.5 * (space.lower[i] + space.upper[i])
        } else {
            raw.clamp(lo, hi)
        };
        center.push(mu);
        width.push(sigma);
    }
    UncertaintySet { center, width }
}

/// Training sets with their observed contexts, plus held-out test sets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskSuite {
    pub suite_version: u32,
    pub seed: u64,
    pub distribution: SetDistribution,
    pub train_sets: Vec<UncertaintySet>,
    /// Contexts sampled per training set, indexed like `train_sets`.
    pub train_contexts: Vec<Vec<ContextVector>>,
    pub test_sets: Vec<UncertaintySet>,
}

impl TaskSuite {
    pub fn n_train_contexts(&self) -> usize {
        self.train_contexts.iter().map(|v| v.len()).sum()
    }

    /// Flat view of (set index, context) training pairs.
    pub fn train_pairs(&self) -> Vec<(usize, &ContextVector)> {
        self.train_contexts
            .iter()
            .enumerate()
            .flat_map(|(i, cs)| cs.iter().map(move |c| (i, c)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let suite: TaskSuite = serde_json::from_str(s)?;
        if suite.suite_version != SUITE_VERSION {
            return Err(SirsaError::Suite(format!(
                "unsupported suite_version {} (expected {SUITE_VERSION})",
                suite.suite_version
            )));
        }
        Ok(suite)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Build a suite: `n_train_sets` sets with `contexts_per_set` uniform samples
/// each, plus `n_test_sets` fresh sets whose centers coincide with no training
/// context (exact-match rejection).
pub fn make_task_suite(
    dist: &SetDistribution,
    n_train_sets: usize,
    contexts_per_set: usize,
    n_test_sets: usize,
    seed: u64,
) -> Result<TaskSuite> {
    if n_train_sets == 0 || contexts_per_set == 0 || n_test_sets == 0 {
        return Err(SirsaError::InvalidConfig(
            "suite counts must be positive".into(),
        ));
    }
    let mut rng = child_rng(seed, 0);
    let mut train_sets = Vec::with_capacity(n_train_sets);
    let mut train_contexts = Vec::with_capacity(n_train_sets);
    for _ in 0..n_train_sets {
        let set = sample_set(dist, &mut rng);
        let contexts: Vec<ContextVector> = (0..contexts_per_set)
            .map(|_| sample_context_uniform(&set, &mut rng))
            .collect();
        train_sets.push(set);
        train_contexts.push(contexts);
    }
    let all_train: Vec<&ContextVector> = train_contexts.iter().flatten().collect();
    let mut test_sets = Vec::with_capacity(n_test_sets);
    while test_sets.len() < n_test_sets {
        let set = sample_set(dist, &mut rng);
        let clashes = all_train.iter().any(|c| c.0 == set.center);
        if !clashes {
            test_sets.push(set);
        }
    }
    Ok(TaskSuite {
        suite_version: SUITE_VERSION,
        seed,
        distribution: dist.clone(),
        train_sets,
        train_contexts,
        test_sets,
    })
}
