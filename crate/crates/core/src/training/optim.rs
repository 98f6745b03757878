//! AdamW with decoupled weight decay.

use crate::error::{Error, Result};
use crate::models::{ModelParams, ParamKind};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Also decay CLS, positional and channel embeddings.
    pub decay_embeddings: bool,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_embeddings: false,
        }
    }
}

impl AdamWConfig {
    pub fn decays(&self, kind: ParamKind) -> bool {
        match kind {
            ParamKind::Weight => true,
            ParamKind::Embedding => self.decay_embeddings,
            ParamKind::Bias | ParamKind::Norm => false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: AdamWConfig,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl OptimState {
    pub fn new(params: &ModelParams, config: AdamWConfig) -> Self {
        let zeros: Vec<Tensor> = params
            .params()
            .iter()
            .map(|p| Tensor::zeros(p.value.shape()))
            .collect();
        OptimState {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, i: usize) -> &Tensor {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &Tensor {
        &self.v[i]
    }
}

/// One AdamW update of every parameter; `grads` is aligned with
/// `params.params()`. Nothing is modified if any gradient is non-finite.
pub fn adamw_step(
    params: &mut ModelParams,
    grads: &[Tensor],
    state: &mut OptimState,
    lr: f64,
    wd: f64,
) -> Result<()> {
    if grads.len() != params.params().len() || state.m.len() != grads.len() {
        return Err(Error::Input(format!(
            "{} gradients and {} moment slots for {} parameters",
            grads.len(),
            state.m.len(),
            params.params().len()
        )));
    }
    for (p, g) in params.params().iter().zip(grads) {
        if g.shape() != p.value.shape() {
            return Err(Error::Dimension {
                op: "adamw gradient",
                left: g.shape().to_vec(),
                right: p.value.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter '{}'", p.name)));
        }
    }

    state.t += 1;
    let cfg = state.config.clone();
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (i, p) in params.params_mut().iter_mut().enumerate() {
        let decay = if cfg.decays(p.kind) { lr * wd } else { 0.0 };
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (((x, &g), m), v) in p
            .value
            .data_mut()
            .iter_mut()
            .zip(grads[i].data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *x -= decay * *x;
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *x -= lr * (*m / bc1) / ((*v / bc2).sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}
