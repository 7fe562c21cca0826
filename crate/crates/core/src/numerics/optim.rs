//! Adam with decoupled weight decay.

use crate::error::{FstError, Result};
use crate::numerics::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        AdamConfig {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment accumulators, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|p| vec![T::zero(); p.numel()]).collect(),
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One optimizer update. Decay is applied to the weights directly,
/// `p <- p * (1 - lr * wd)`, before the moment-based step.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(FstError::Shape(format!(
            "adam_step: {} params, {} grads, {} state slots",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if cfg.lr < 0.0 {
        return Err(FstError::Contract("learning rate must be non-negative".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let bc1 = T::of(1.0 - cfg.beta1.powi(t));
    let bc2 = T::of(1.0 - cfg.beta2.powi(t));
    let lr = T::of(cfg.lr);
    let decay = T::of(1.0 - cfg.lr * cfg.weight_decay);
    let eps = T::of(cfg.eps);

    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        if p.shape() != g.shape() {
            return Err(FstError::Shape(format!(
                "adam_step: param {:?} vs grad {:?}",
                p.shape(),
                g.shape()
            )));
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (((w, &gr), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *w = *w * decay;
            *mi = b1 * *mi + (T::one() - b1) * gr;
            *vi = b2 * *vi + (T::one() - b2) * gr * gr;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
