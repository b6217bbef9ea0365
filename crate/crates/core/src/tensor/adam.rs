//! Adam optimizer with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

use super::array::Array;

#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Per-tensor moment estimates. Zero-initialized; `t` counts completed steps.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub m: Array,
    pub v: Array,
    pub t: u64,
}

impl AdamState {
    pub fn new(shape: &[usize]) -> Self {
        AdamState {
            m: Array::zeros(shape),
            v: Array::zeros(shape),
            t: 0,
        }
    }
}

/// One Adam update on a single tensor.
///
/// Rejects non-finite gradients so a diverging run fails loudly with the
/// offending parameter named instead of silently poisoning the weights.
pub fn adam_step(
    name: &str,
    value: &mut Array,
    grad: &Array,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    assert_eq!(value.shape(), grad.shape(), "adam_step: grad shape mismatch");
    assert_eq!(value.shape(), state.m.shape(), "adam_step: state shape mismatch");
    if !grad.is_finite() {
        return Err(Error::numeric(format!(
            "non-finite gradient for parameter `{name}`"
        )));
    }

    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let m = state.m.data_mut();
    let v = state.v.data_mut();
    let out = value.data_mut();
    for i in 0..out.len() {
        let g = grad.data()[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        out[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Optimizer over a set of named tensors; states are created lazily on
/// first touch and kept in name order so updates are deterministic.
#[derive(Debug, Default)]
pub struct Adam {
    pub config: AdamConfig,
    states: BTreeMap<String, AdamState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            states: BTreeMap::new(),
        }
    }

    pub fn step(&mut self, name: &str, value: &mut Array, grad: &Array) -> Result<()> {
        let state = self
            .states
            .entry(name.to_string())
            .or_insert_with(|| AdamState::new(value.shape()));
        adam_step(name, value, grad, state, &self.config)
    }
}
