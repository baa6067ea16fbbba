use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
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

/// First/second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Element> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().iter().map(Tensor::zeros_like).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

fn check_grads<T: Element>(params: &ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::axes(
            "optimizer",
            "gradients",
            grads.len(),
            "parameters",
            params.len(),
        ));
    }
    for (id, g) in params.ids().zip(grads) {
        if g.shape() != params.get(id).shape() {
            return Err(Error::ShapeMismatch {
                op: "optimizer",
                shapes: format!(
                    "gradient {:?} for parameter `{}` of shape {:?}",
                    g.shape(),
                    params.name(id),
                    params.get(id).shape()
                ),
            });
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient {
                param: params.name(id).to_string(),
            });
        }
    }
    Ok(())
}

/// Bias-corrected Adam update. Nothing is modified when a gradient is
/// non-finite.
pub fn adam_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let correction1 = 1.0 - beta1.powi(t);
    let correction2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::of(beta1), T::of(beta2));
    let (one_b1, one_b2) = (T::of(1.0 - beta1), T::of(1.0 - beta2));
    let (c1, c2) = (T::of(correction1), T::of(correction2));
    let (lr, eps) = (T::of(lr), T::of(eps));
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + one_b1 * gv;
            *vv = b2 * *vv + one_b2 * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// `p ← p − lr·g`.
pub fn sgd_step<T: Element>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    lr: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    let lr = T::of(lr);
    for (p, g) in params.tensors_mut().iter_mut().zip(grads) {
        for (pv, &gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv = *pv - lr * gv;
        }
    }
    Ok(())
}

/// SGD with optional heavy-ball momentum (`momentum = 0` is plain SGD).
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState<T> {
    pub momentum: f64,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Element> SgdState<T> {
    pub fn new(params: &ParamStore<T>, momentum: f64) -> Self {
        let velocity = if momentum > 0.0 {
            params.tensors().iter().map(Tensor::zeros_like).collect()
        } else {
            Vec::new()
        };
        Self { momentum, velocity }
    }

    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if self.momentum <= 0.0 {
            return sgd_step(params, grads, lr);
        }
        check_grads(params, grads)?;
        let (mu, lr) = (T::of(self.momentum), T::of(lr));
        for ((p, g), vel) in params
            .tensors_mut()
            .iter_mut()
            .zip(grads)
            .zip(&mut self.velocity)
        {
            for ((pv, &gv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
                *vv = mu * *vv + gv;
                *pv = *pv - lr * *vv;
            }
        }
        Ok(())
    }
}

/// `base_lr · 0.5^⌊epoch / half_every⌋`; `half_every = 0` disables decay.
pub fn step_decay(epoch: usize, base_lr: f64, half_every: usize) -> f64 {
    if half_every == 0 {
        return base_lr;
    }
    base_lr * 0.5f64.powi((epoch / half_every) as i32)
}

/// Fine-tuning schedule: the rate halves every 20 epochs.
pub fn lr_schedule(phase2_epoch: usize, base_lr: f64) -> f64 {
    step_decay(phase2_epoch, base_lr, 20)
}
