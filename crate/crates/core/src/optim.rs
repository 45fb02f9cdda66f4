//! Adam with bias correction.

use crate::error::{invalid, Result, TensorError};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment accumulators for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    /// Zeroed state shaped like `params`.
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>) -> Self {
        let first_moment: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            step: 0,
            second_moment: first_moment.clone(),
            first_moment,
        }
    }

    pub fn cast<U: Real>(&self) -> AdamState<U> {
        AdamState {
            step: self.step,
            first_moment: self.first_moment.iter().map(Tensor::cast).collect(),
            second_moment: self.second_moment.iter().map(Tensor::cast).collect(),
        }
    }
}

/// One Adam update of `params` in place.
///
/// A parameter tensor whose gradient is identically zero took no part in the loss and is
/// skipped entirely (moments and values untouched); the step counter still advances.
/// Non-finite gradients are rejected before anything is modified.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return invalid(format!("adam: learning rate must be positive, got {}", cfg.lr));
    }
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return invalid(format!(
            "adam: {} parameters, {} gradients, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first_moment) {
        g.expect_shape("adam gradient", p.shape())?;
        m.expect_shape("adam moment", p.shape())?;
        if !g.is_finite() {
            return Err(TensorError::NonFinite("adam gradient"));
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let one = T::one();
    let c1 = one - b1.powi(t);
    let c2 = one - b2.powi(t);
    let lr = T::from_f64_lossy(cfg.lr);
    let eps = T::from_f64_lossy(cfg.epsilon);

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        if g.iter().all(|&v| v == T::zero()) {
            continue;
        }
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
