//! Adam with bias-corrected moments.

use crate::error::{Error, Result};
use crate::segnet::Parameter;
use crate::tensor_core::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T: Scalar = f32> {
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &[Parameter<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor<T>] {
        &self.second
    }
}

/// One update of every parameter from its accumulated gradient; gradients
/// are cleared afterwards.
pub fn adam_step<T: Scalar>(params: &mut [Parameter<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if params.len() != state.first.len() {
        return Err(Error::ParameterMismatch(format!(
            "optimizer tracks {} tensors, network has {}",
            state.first.len(),
            params.len()
        )));
    }
    if let Some(p) = params.iter().find(|p| p.grad.is_none()) {
        return Err(Error::MissingGradient { name: p.name.clone() });
    }
    state.step += 1;
    let t = state.step as f64;
    let c1 = 1.0 - BETA1.powf(t);
    let c2 = 1.0 - BETA2.powf(t);
    for ((p, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let g = p.grad.take().expect("checked above");
        g.ensure_same_shape(&p.value, "adam_step")?;
        let moments = m.data_mut().iter_mut().zip(v.data_mut());
        for ((w, &gi), (mi, vi)) in p.value.data_mut().iter_mut().zip(g.data()).zip(moments) {
            let gi = gi.as_f64();
            let m_new = BETA1 * mi.as_f64() + (1.0 - BETA1) * gi;
            let v_new = BETA2 * vi.as_f64() + (1.0 - BETA2) * gi * gi;
            *mi = T::of(m_new);
            *vi = T::of(v_new);
            let update = lr * (m_new / c1) / ((v_new / c2).sqrt() + EPS);
            *w = T::of(w.as_f64() - update);
        }
    }
    Ok(())
}
