//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update of a flat array. `t` is the already-incremented step.
pub fn adam_update(
    config: &AdamConfig,
    t: u64,
    param: &mut [f64],
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
) {
    let bias1 = 1.0 - config.beta1.powf(t as f64);
    let bias2 = 1.0 - config.beta2.powf(t as f64);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
        v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
        let m_hat = m[i] / bias1;
        let v_hat = v[i] / bias2;
        param[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.len()]).collect();
        AdamState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if !grads.matches(params) || self.m.len() != params.len() {
            return Err(Error::shape(
                "adam_step",
                format!("{} parameter arrays", self.m.len()),
                format!("{} / {}", params.len(), grads.arrays().len()),
            ));
        }
        self.t += 1;
        for (i, p) in params.iter_mut().enumerate() {
            if p.len() != self.m[i].len() {
                return Err(Error::shape("adam_step", self.m[i].len(), p.len()));
            }
            adam_update(
                &self.config,
                self.t,
                &mut p.data,
                &grads.arrays()[i],
                &mut self.m[i],
                &mut self.v[i],
            );
        }
        Ok(())
    }
}
