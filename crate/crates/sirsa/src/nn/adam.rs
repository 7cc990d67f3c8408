//! Adam optimizer over [`Mlp`] parameters.

use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpGrads};
use crate::error::SirsaError;
use crate::Result;

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// First/second moment accumulators, flattened in parameter order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub params: AdamParams,
    pub step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(net: &Mlp, params: AdamParams) -> Self {
        Self {
            params,
            step: 0,
            m: vec![0.0; net.n_params()],
            v: vec![0.0; net.n_params()],
        }
    }
}

/// One descent step on `net` along `grads`, with bias-corrected moments.
pub fn adam_step(net: &mut Mlp, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if state.m.len() != net.n_params() {
        return Err(SirsaError::DimensionMismatch {
            expected: state.m.len(),
            got: net.n_params(),
        });
    }
    if !grads.is_finite() {
        return Err(SirsaError::Numerical("non-finite gradient in adam_step".into()));
    }
    state.step += 1;
    let AdamParams {
        lr,
        beta1,
        beta2,
        eps,
    } = state.params;
    let bc1 = 1.0 - beta1.powi(state.step as i32);
    let bc2 = 1.0 - beta2.powi(state.step as i32);

    let mut flat_grads = Vec::with_capacity(net.n_params());
    grads.for_each(|g| flat_grads.push(g));

    let mut i = 0;
    net.for_each_param_mut(|w| {
        let g = flat_grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
        i += 1;
    });
    Ok(())
}
