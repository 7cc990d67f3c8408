//! Minimal differentiable function approximator.
//!
//! Fully-connected networks over `f64` with exact reverse-mode gradients, an
//! Adam optimizer, Polyak-averaged target copies, and a squashed-Gaussian
//! policy head. Small enough to audit, fast enough for desk-scale training.

mod adam;
mod mlp;
mod policy;

pub use adam::{adam_step, AdamParams, AdamState};
pub use mlp::{polyak_update, Activation, Mlp, MlpCache, MlpGrads};
pub use policy::{GaussianPolicy, PolicySample, LOG_STD_MAX, LOG_STD_MIN};
