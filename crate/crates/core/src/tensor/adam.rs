use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Gradients, ParamId, ParamSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: BTreeMap<ParamId, Vec<f64>>,
    second: BTreeMap<ParamId, Vec<f64>>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            ..Self::default()
        }
    }

    pub fn first_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.first.get(&id).map(Vec::as_slice)
    }

    pub fn second_moment(&self, id: ParamId) -> Option<&[f64]> {
        self.second.get(&id).map(Vec::as_slice)
    }
}

/// One bias-corrected Adam step. Parameters without a gradient entry are
/// left untouched, and so are their moments.
pub fn adam_update(
    params: &mut ParamSet,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !(lr >= 0.0) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be nonnegative, got {lr}")));
    }
    for id in grads.keys() {
        if id.0 >= params.len() {
            return Err(Error::Usage(format!("gradient for unknown parameter {}", id.0)));
        }
        if params.get(id).shape() != grads.get(id).expect("key").shape() {
            return Err(Error::Config(format!(
                "gradient shape mismatch for {}",
                params.name(id)
            )));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (id, g) in grads.iter() {
        let n = g.len();
        let m = state.first.entry(id).or_insert_with(|| vec![0.0; n]);
        let v = state.second.entry(id).or_insert_with(|| vec![0.0; n]);
        let p = params.get_mut(id).data_mut();
        for i in 0..n {
            let gi = g.data()[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
