use serde::{Deserialize, Serialize};

use super::{ParamSet, Tensor};
use crate::error::{Error, Result};

/// Optimizer hyperparameters. Defaults follow the fine-tuning table:
/// lr 3e-5, betas (0.9, 0.999), weight decay 1e-4, clip norm 1.0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Global-norm clip threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            clip_norm: Some(1.0),
        }
    }
}

/// First/second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: ParamSet,
    v: ParamSet,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One decoupled-weight-decay Adam update.
///
/// The gradient is clipped to `clip_norm` by global L2 norm before the
/// moments are updated. Returns the pre-clip gradient norm.
pub fn adam_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<f64> {
    if !(cfg.lr > 0.0) {
        return Err(Error::invalid(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::shape("adam_step", "params, grads and state layouts differ"));
    }
    let norm = grads.global_norm();
    if !norm.is_finite() {
        return Err(Error::NonFinite("gradient norm".into()));
    }
    let clip = match cfg.clip_norm {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    let grads = grads.iter().map(|(_, g)| g);
    let ms = state.m.iter_mut()?.map(|(_, m)| m);
    let vs = state.v.iter_mut()?.map(|(_, v)| v);
    for ((((_, p), g), m), v) in params.iter_mut()?.zip(grads).zip(ms).zip(vs) {
        update(p, g, m, v, clip, bc1, bc2, cfg);
    }
    Ok(norm)
}

#[allow(clippy::too_many_arguments)]
fn update(
    p: &mut Tensor,
    g: &Tensor,
    m: &mut Tensor,
    v: &mut Tensor,
    clip: f64,
    bc1: f64,
    bc2: f64,
    cfg: &AdamConfig,
) {
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    let (m, v) = (m.data_mut(), v.data_mut());
    for (i, (pv, &gv)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
        let gv = gv * clip;
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gv;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gv * gv;
        let mhat = m[i] / bc1;
        let vhat = v[i] / bc2;
        *pv = *pv * decay - cfg.lr * mhat / (vhat.sqrt() + cfg.eps);
    }
}
