use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ModelParams, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &ModelParams, config: AdamConfig) -> Self {
        let zeros = |_: ()| {
            params
                .iter()
                .map(|(k, t)| (k.clone(), vec![0.0; t.numel()]))
                .collect::<BTreeMap<_, _>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(()),
            v: zeros(()),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&[f64]> {
        self.m.get(name).map(Vec::as_slice)
    }

    pub fn second_moment(&self, name: &str) -> Option<&[f64]> {
        self.v.get(name).map(Vec::as_slice)
    }

    /// One bias-corrected Adam update in place. Parameters without a gradient
    /// entry are left untouched together with their moments.
    pub fn update(&mut self, params: &mut ModelParams, grads: &Gradients) -> Result<()> {
        for (name, g) in grads.iter() {
            let p = params
                .get(name)
                .ok_or_else(|| Error::contract(format!("gradient for unknown parameter {name}")))?;
            if p.shape() != g.shape() {
                return Err(Error::contract(format!(
                    "gradient shape {:?} does not match parameter {name} shape {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
            let m = self.m.get(name).map(Vec::len);
            let v = self.v.get(name).map(Vec::len);
            if m != Some(p.numel()) || v != Some(p.numel()) {
                return Err(Error::contract(format!(
                    "optimizer state for {name} does not mirror the parameter"
                )));
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for (name, g) in grads.iter() {
            let m = self.m.get_mut(name).expect("checked above");
            let v = self.v.get_mut(name).expect("checked above");
            let p: &mut Tensor = params.get_mut(name).expect("checked above");
            for (((w, gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.set_version(params.version() + 1);
        Ok(())
    }
}

/// Pure form of [`AdamState::update`]: inputs are left untouched.
pub fn adam_step(
    params: &ModelParams,
    grads: &Gradients,
    state: &AdamState,
) -> Result<(ModelParams, AdamState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    state.update(&mut params, grads)?;
    Ok((params, state))
}
