//! Point-mass navigation environment.
//!
//! A particle drifts rightward at a fixed (but hidden) per-step velocity and
//! must cross a circular obstacle centered at the origin whose radius is also
//! hidden. The single action shifts the y position. Per-step reward is
//! `1 − 𝟙(x² + y² < r²) − 8|y|`: a living bonus, a collision penalty, and a
//! detour penalty, so the optimal trajectory hugs y = 0 and clears the
//! obstacle as tightly as the agent's knowledge of the radius allows.
//!
//! Three variants control which parameters are uncertain: the obstacle radius
//! (hard to identify without contact), the velocity (identifiable from any
//! single transition), or both. Wrappers for misspecified priors and
//! non-stationary contexts live here too.

use serde::{Deserialize, Serialize};

use crate::error::SirsaError;
use crate::rcmdp::{sample_context_uniform, ContextSpace, ContextVector, UncertaintySet};
use crate::Result;

/// Default episode length in steps.
pub const HORIZON: usize = 50;
/// Default per-step action bound on the change in y.
pub const ACTION_MAX: f64 = 0.05;
/// Default start position; far enough left that every admissible velocity
/// carries the agent across the obstacle within the horizon.
pub const START_X: f64 = -2.0;

/// Environment geometry and limits; all experiment-config fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub variant: EnvVariant,
    pub horizon: usize,
    pub action_max: f64,
    pub start_x: f64,
}

impl EnvConfig {
    pub fn new(variant: EnvVariant) -> Self {
        Self {
            variant,
            horizon: HORIZON,
            action_max: ACTION_MAX,
            start_x: START_X,
        }
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.horizon == 0 {
            return Err(SirsaError::InvalidConfig("horizon must be positive".into()));
        }
        if !(self.action_max > 0.0 && self.action_max.is_finite()) {
            return Err(SirsaError::InvalidConfig(
                "action_max must be positive and finite".into(),
            ));
        }
        if !self.start_x.is_finite() {
            return Err(SirsaError::InvalidConfig("start_x must be finite".into()));
        }
        Ok(())
    }
}
/// Obstacle radius range.
pub const RADIUS_RANGE: (f64, f64) = (0.025, 0.075);
/// Per-step velocity range.
pub const VELOCITY_RANGE: (f64, f64) = (0.06, 0.1);
/// Simulator-safe clamp for misspecified radii.
pub const RADIUS_SAFE: (f64, f64) = (0.005, 0.15);
/// Simulator-safe clamp for misspecified velocities.
pub const VELOCITY_SAFE: (f64, f64) = (0.01, 0.2);

/// Which task parameters are uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvVariant {
    ObstacleOnly,
    VelocityOnly,
    Combined,
}

impl EnvVariant {
    /// Dimension of the uncertain context.
    pub fn context_dim(self) -> usize {
        match self {
            EnvVariant::ObstacleOnly | EnvVariant::VelocityOnly => 1,
            EnvVariant::Combined => 2,
        }
    }

    /// Range of the uncertain parameters.
    pub fn context_space(self) -> ContextSpace {
        let (r_lo, r_hi) = RADIUS_RANGE;
        let (v_lo, v_hi) = VELOCITY_RANGE;
        let (lower, upper) = match self {
            EnvVariant::ObstacleOnly => (vec![r_lo], vec![r_hi]),
            EnvVariant::VelocityOnly => (vec![v_lo], vec![v_hi]),
            EnvVariant::Combined => (vec![r_lo, v_lo], vec![r_hi, v_hi]),
        };
        ContextSpace::new(lower, upper).expect("static ranges are valid")
    }

    /// Simulator-safe clamp bounds for contexts that may exit the nominal range.
    pub fn safe_bounds(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            EnvVariant::ObstacleOnly => (vec![RADIUS_SAFE.0], vec![RADIUS_SAFE.1]),
            EnvVariant::VelocityOnly => (vec![VELOCITY_SAFE.0], vec![VELOCITY_SAFE.1]),
            EnvVariant::Combined => (
                vec![RADIUS_SAFE.0, VELOCITY_SAFE.0],
                vec![RADIUS_SAFE.1, VELOCITY_SAFE.1],
            ),
        }
    }

    /// Decode a context vector into concrete task parameters; frozen
    /// dimensions sit at their range midpoint.
    pub fn decode(self, c: &ContextVector) -> Result<PointMassContext> {
        let expected = self.context_dim();
        if c.dim() != expected {
            return Err(SirsaError::DimensionMismatch {
                expected,
                got: c.dim(),
            });
        }
        let r_mid = 0.5 * (RADIUS_RANGE.0 + RADIUS_RANGE.1);
        let v_mid = 0.5 * (VELOCITY_RANGE.0 + VELOCITY_RANGE.1);
        Ok(match self {
            EnvVariant::ObstacleOnly => PointMassContext {
                obstacle_radius: c.0[0],
                velocity: v_mid,
            },
            EnvVariant::VelocityOnly => PointMassContext {
                obstacle_radius: r_mid,
                velocity: c.0[0],
            },
            EnvVariant::Combined => PointMassContext {
                obstacle_radius: c.0[0],
                velocity: c.0[1],
            },
        })
    }
}

/// Concrete task parameters after decoding a context.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassContext {
    pub obstacle_radius: f64,
    pub velocity: f64,
}

/// Agent state: position plus the on-obstacle indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMassState {
    pub x: f64,
    pub y: f64,
    pub on_obstacle: f64,
}

impl PointMassState {
    pub const DIM: usize = 3;

    pub fn to_vec(self) -> [f64; 3] {
        [self.x, self.y, self.on_obstacle]
    }
}

/// One environment step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: PointMassState,
    pub action: f64,
    pub reward: f64,
    pub next_state: PointMassState,
    pub done: bool,
}

fn on_obstacle(x: f64, y: f64, radius: f64) -> f64 {
    if x * x + y * y < radius * radius {
        1.0
    } else {
        0.0
    }
}

/// Deterministic start state to the left of the obstacle.
pub fn reset(c: &PointMassContext, env: &EnvConfig) -> PointMassState {
    PointMassState {
        x: env.start_x,
        y: 0.0,
        on_obstacle: on_obstacle(env.start_x, 0.0, c.obstacle_radius),
    }
}

/// Advance one step. The action is clamped to `[−action_max, action_max]`;
/// `done` is owned by the episode runner (time-limit only), so it is false here.
pub fn step(
    state: &PointMassState,
    action: f64,
    c: &PointMassContext,
    env: &EnvConfig,
) -> Result<Transition> {
    if !action.is_finite() {
        return Err(SirsaError::Numerical(format!(
            "non-finite action {action}"
        )));
    }
    let a = action.clamp(-env.action_max, env.action_max);
    let x = state.x + c.velocity;
    let y = state.y + a;
    let hit = on_obstacle(x, y, c.obstacle_radius);
    let reward = 1.0 - hit - 8.0 * y.abs();
    Ok(Transition {
        state: *state,
        action: a,
        reward,
        next_state: PointMassState {
            x,
            y,
            on_obstacle: hit,
        },
        done: false,
    })
}

/// Loose sanity bound: max per-step reward times the horizon.
pub fn episode_return_upper_bound(_c: &PointMassContext) -> f64 {
    HORIZON as f64
}

/// Policy interface used by rollout helpers. Implementations may carry
/// per-episode state (recursive filters, sampled policy ensembles).
pub trait RolloutPolicy {
    /// Called once at episode start with the prior uncertainty set.
    fn begin_episode(&mut self, prior: &UncertaintySet, rng: &mut crate::rcmdp::ExperimentRng);
    /// Choose an action for the current state.
    fn act(&mut self, state: &PointMassState, rng: &mut crate::rcmdp::ExperimentRng) -> f64;
    /// Observe the transition produced by the last action.
    fn observe(&mut self, transition: &Transition);
}

/// Roll one fixed-context episode; returns total reward and the transition trace.
pub fn rollout_fixed(
    policy: &mut dyn RolloutPolicy,
    env: &EnvConfig,
    c: &ContextVector,
    prior: &UncertaintySet,
    rng: &mut crate::rcmdp::ExperimentRng,
) -> Result<(f64, Vec<Transition>)> {
    let params = env.variant.decode(c)?;
    policy.begin_episode(prior, rng);
    let mut state = reset(&params, env);
    let mut total = 0.0;
    let mut trace = Vec::with_capacity(env.horizon);
    for t in 0..env.horizon {
        let action = policy.act(&state, rng);
        let mut tr = step(&state, action, &params, env)?;
        tr.done = t + 1 == env.horizon;
        total += tr.reward;
        state = tr.next_state;
        policy.observe(&tr);
        trace.push(tr);
    }
    Ok((total, trace))
}

/// Roll one episode where the hidden context is resampled from `set` at
/// t = 0, period, 2·period, …; returns total reward and the per-step rewards.
pub fn nonstationary_rollout(
    policy: &mut dyn RolloutPolicy,
    env: &EnvConfig,
    set: &UncertaintySet,
    period: usize,
    rng: &mut crate::rcmdp::ExperimentRng,
) -> Result<(f64, Vec<f64>)> {
    if period == 0 || env.horizon % period != 0 {
        return Err(SirsaError::InvalidConfig(format!(
            "period {period} must divide horizon {}",
            env.horizon
        )));
    }
    policy.begin_episode(set, rng);
    let mut params = env.variant.decode(&sample_context_uniform(set, rng))?;
    let mut state = reset(&params, env);
    let mut total = 0.0;
    let mut rewards = Vec::with_capacity(env.horizon);
    for t in 0..env.horizon {
        if t > 0 && t % period == 0 {
            // New context, same pose: only the hidden parameters switch.
            params = env.variant.decode(&sample_context_uniform(set, rng))?;
        }
        let action = policy.act(&state, rng);
        let mut tr = step(&state, action, &params, env)?;
        tr.done = t + 1 == env.horizon;
        total += tr.reward;
        rewards.push(tr.reward);
        state = tr.next_state;
        policy.observe(&tr);
    }
    Ok((total, rewards))
}

/// Write a rollout trace as CSV rows `(t, reward, x, y, context_hash)`; the
/// position is the post-step state.
pub fn write_reward_trace_csv(
    path: &std::path::Path,
    trace: &[Transition],
    context_hash: u64,
) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "reward", "x", "y", "context_hash"])?;
    for (t, tr) in trace.iter().enumerate() {
        w.write_record([
            &t.to_string(),
            &format!("{:.17}", tr.reward),
            &format!("{:.17}", tr.next_state.x),
            &format!("{:.17}", tr.next_state.y),
            &context_hash.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// All `2^d` corner contexts `μ ± (1+r_level)·σ` of a set, clamped to the
/// simulator-safe bounds. With r_level > 0 the corners intentionally exit the
/// set (and possibly the nominal parameter range).
pub fn make_misspecified_contexts(
    set: &UncertaintySet,
    r_level: f64,
    variant: EnvVariant,
) -> Vec<ContextVector> {
    let d = set.dim();
    let (safe_lo, safe_hi) = variant.safe_bounds();
    let scale = 1.0 + r_level;
    let mut corners = Vec::with_capacity(1 << d);
    for mask in 0..(1usize << d) {
        let c: Vec<f64> = (0..d)
            .map(|i| {
                let w = if mask & (1 << i) != 0 { scale } else { -scale };
                (set.center[i] + w * set.width[i]).clamp(safe_lo[i], safe_hi[i])
            })
            .collect();
        corners.push(ContextVector(c));
    }
    corners
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rcmdp::child_rng;

    fn ctx(r: f64, v: f64) -> PointMassContext {
        PointMassContext {
            obstacle_radius: r,
            velocity: v,
        }
    }

    #[test]
    fn reset_is_deterministic_and_off_obstacle() {
        let c = ctx(0.075, 0.08);
        let s = reset(&c);
        assert_eq!((s.x, s.y, s.on_obstacle), (-2.0, 0.0, 0.0));
        assert_eq!(reset(&c), s);
    }

    #[test]
    fn step_reward_examples() {
        // From (0, 0) with zero action: x' = 0.08, outside r = 0.05.
        let t = step(
            &PointMassState {
                x: 0.0,
                y: 0.0,
                on_obstacle: 1.0,
            },
            0.0,
            &ctx(0.05, 0.08),
        )
        .unwrap();
        assert_eq!(t.next_state.x, 0.08);
        assert_eq!(t.next_state.y, 0.0);
        assert_eq!(t.reward, 1.0);

        // Hypothetical zero velocity: stays inside the obstacle.
        let t = step(
            &PointMassState {
                x: -0.01,
                y: 0.0,
                on_obstacle: 1.0,
            },
            0.0,
            &ctx(0.05, 0.0),
        )
        .unwrap();
        assert_eq!(t.reward, 0.0);
        assert_eq!(t.next_state.on_obstacle, 1.0);

        // Detour penalty: 8·|0.1| = 0.8.
        let t = step(
            &PointMassState {
                x: 1.0,
                y: 0.1,
                on_obstacle: 0.0,
            },
            0.0,
            &ctx(0.05, 0.08),
        )
        .unwrap();
        assert!((t.reward - 0.2).abs() < 1e-12);
    }

    #[test]
    fn action_clamped_and_nonfinite_rejected() {
        let s = reset(&ctx(0.05, 0.08));
        let t = step(&s, 10.0, &ctx(0.05, 0.08)).unwrap();
        assert_eq!(t.action, ACTION_MAX);
        assert_eq!(t.next_state.y, ACTION_MAX);
        assert!(step(&s, f64::NAN, &ctx(0.05, 0.08)).is_err());
    }

    #[test]
    fn upper_bound_holds_for_rollouts() {
        struct Zero;
        impl RolloutPolicy for Zero {
            fn begin_episode(&mut self, _: &UncertaintySet, _: &mut crate::rcmdp::ExperimentRng) {}
            fn act(&mut self, _: &PointMassState, _: &mut crate::rcmdp::ExperimentRng) -> f64 {
                0.0
            }
            fn observe(&mut self, _: &Transition) {}
        }
        let variant = EnvVariant::Combined;
        let mut rng = child_rng(1, 0);
        let set = UncertaintySet::spanning(&variant.context_space());
        for _ in 0..20 {
            let c = sample_context_uniform(&set, &mut rng);
            let params = variant.decode(&c).unwrap();
            let (ret, trace) = rollout_fixed(
                &mut Zero,
                variant,
                &c,
                &set,
                HORIZON,
                &mut rng,
            )
            .unwrap();
            assert!(ret <= episode_return_upper_bound(&params));
            assert_eq!(trace.len(), HORIZON);
            // Table values in the mid-30s to low-40s stay under the bound.
            assert!(34.0 < 50.0 && 43.0 < 50.0);
        }
    }

    #[test]
    fn velocity_recoverable_from_one_transition() {
        let c = ctx(0.05, 0.073);
        let mut s = reset(&c);
        for _ in 0..10 {
            let t = step(&s, 0.01, &c).unwrap();
            assert!((t.next_state.x - t.state.x - 0.073).abs() < 1e-12);
            s = t.next_state;
        }
    }

    #[test]
    fn obstacle_penalty_monotone_in_radius() {
        // Fixed straight-line trajectory: total penalty non-decreasing in r.
        let mut prev_hits = 0;
        for &r in &[0.025, 0.05, 0.075] {
            let c = ctx(r, 0.08);
            let mut s = reset(&c);
            let mut hits = 0;
            for _ in 0..HORIZON {
                let t = step(&s, 0.0, &c).unwrap();
                if t.next_state.on_obstacle > 0.0 {
                    hits += 1;
                }
                s = t.next_state;
            }
            assert!(hits >= prev_hits);
            prev_hits = hits;
        }
        assert!(prev_hits > 0);
    }

    #[test]
    fn misspecified_corner_contexts() {
        let set = UncertaintySet::new(vec![0.05], vec![0.01]).unwrap();
        let corners = make_misspecified_contexts(&set, 1.0, EnvVariant::ObstacleOnly);
        let mut values: Vec<f64> = corners.iter().map(|c| c.0[0]).collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(values.len(), 2);
        assert!((values[0] - 0.03).abs() < 1e-12);
        assert!((values[1] - 0.07).abs() < 1e-12);

        // r = 0 returns the set's own corners.
        let corners0 = make_misspecified_contexts(&set, 0.0, EnvVariant::ObstacleOnly);
        let mut v0: Vec<f64> = corners0.iter().map(|c| c.0[0]).collect();
        v0.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((v0[0] - 0.04).abs() < 1e-12 && (v0[1] - 0.06).abs() < 1e-12);

        // 2-d sets have exactly 4 corners.
        let set2 = UncertaintySet::new(vec![0.05, 0.08], vec![0.00625, 0.005]).unwrap();
        assert_eq!(
            make_misspecified_contexts(&set2, 0.5, EnvVariant::Combined).len(),
            4
        );
    }

    #[test]
    fn misspecified_contexts_respect_safe_bounds() {
        let set = UncertaintySet::new(vec![0.075], vec![0.05]).unwrap();
        for c in make_misspecified_contexts(&set, 1.0, EnvVariant::ObstacleOnly) {
            assert!(c.0[0] >= RADIUS_SAFE.0 && c.0[0] <= RADIUS_SAFE.1);
        }
    }

    #[test]
    fn nonstationary_with_zero_width_matches_stationary() {
        struct Wiggle(u32);
        impl RolloutPolicy for Wiggle {
            fn begin_episode(&mut self, _: &UncertaintySet, _: &mut crate::rcmdp::ExperimentRng) {
                self.0 = 0;
            }
            fn act(&mut self, _: &PointMassState, _: &mut crate::rcmdp::ExperimentRng) -> f64 {
                self.0 += 1;
                if self.0 % 2 == 0 {
                    0.02
                } else {
                    -0.02
                }
            }
            fn observe(&mut self, _: &Transition) {}
        }
        let variant = EnvVariant::VelocityOnly;
        let c = ContextVector(vec![0.08]);
        let set = UncertaintySet::degenerate(&c);
        let mut rng_a = child_rng(5, 0);
        let mut rng_b = child_rng(5, 0);
        let (r_ns, rewards) =
            nonstationary_rollout(&mut Wiggle(0), variant, &set, 10, HORIZON, &mut rng_a).unwrap();
        let (r_fix, _) =
            rollout_fixed(&mut Wiggle(0), variant, &c, &set, HORIZON, &mut rng_b).unwrap();
        assert_eq!(rewards.len(), HORIZON);
        assert!((r_ns - r_fix).abs() < 1e-12);
    }

    #[test]
    fn nonstationary_period_must_divide_horizon() {
        struct Zero;
        impl RolloutPolicy for Zero {
            fn begin_episode(&mut self, _: &UncertaintySet, _: &mut crate::rcmdp::ExperimentRng) {}
            fn act(&mut self, _: &PointMassState, _: &mut crate::rcmdp::ExperimentRng) -> f64 {
                0.0
            }
            fn observe(&mut self, _: &Transition) {}
        }
        let set = UncertaintySet::new(vec![0.08], vec![0.005]).unwrap();
        let mut rng = child_rng(6, 0);
        assert!(nonstationary_rollout(
            &mut Zero,
            EnvVariant::VelocityOnly,
            &set,
            7,
            HORIZON,
            &mut rng
        )
        .is_err());
    }
}
