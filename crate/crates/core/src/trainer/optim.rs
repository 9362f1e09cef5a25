//! Adam with decoupled weight decay.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::model::{ModelParams, ParamGroup};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamWConfig {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one tensor, with its own step count.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

/// Moments keyed by tensor name. Tensors that never received a gradient
/// have no entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub moments: BTreeMap<String, MomentState>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest per-tensor step count.
    pub fn steps(&self) -> u64 {
        self.moments.values().map(|m| m.step).max().unwrap_or(0)
    }
}

/// One update of every tensor in `active`. Tensors outside `active` are
/// skipped entirely: no decay, no moment update.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptimizerState,
    active: &BTreeSet<ParamGroup>,
    cfg: &AdamWConfig,
) {
    let grads = grads.tensors();
    for ((group, name, p), (_, gname, g)) in params.tensors_mut().into_iter().zip(grads) {
        debug_assert_eq!(name, gname);
        if !active.contains(&group) {
            continue;
        }
        let st = state.moments.entry(name).or_insert_with(|| MomentState {
            m: vec![0.0; p.len()],
            v: vec![0.0; p.len()],
            step: 0,
        });
        st.step += 1;
        let t = st.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
        for i in 0..p.data.len() {
            let gi = g.data[i];
            st.m[i] = cfg.beta1 * st.m[i] + (1.0 - cfg.beta1) * gi;
            st.v[i] = cfg.beta2 * st.v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = st.m[i] / bc1;
            let vhat = st.v[i] / bc2;
            p.data[i] = p.data[i] * decay - cfg.learning_rate * mhat / (vhat.sqrt() + cfg.eps);
        }
    }
}
