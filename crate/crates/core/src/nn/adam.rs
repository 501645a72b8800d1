use serde::{Deserialize, Serialize};

use super::{NnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Moment estimates for one parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(NnError::LengthMismatch(params.len(), grads.len()));
    }
    if params.len() != state.m.len() {
        return Err(NnError::LengthMismatch(params.len(), state.m.len()));
    }
    let AdamConfig {
        lr,
        beta1,
        beta2,
        eps,
    } = state.config;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        let m = beta1 * state.m[i] + (1.0 - beta1) * g;
        let v = beta2 * state.v[i] + (1.0 - beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        params[i] -= lr * (m / c1) / ((v / c2).sqrt() + eps);
    }
    Ok(())
}
