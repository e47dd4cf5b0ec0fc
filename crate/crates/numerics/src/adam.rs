//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Tensor<T>>,
    second: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = |p: &crate::param::Parameter<T>| Tensor::zeros(p.value.shape());
        AdamState {
            config,
            step: 0,
            first: params.iter().map(zeros).collect(),
            second: params.iter().map(zeros).collect(),
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update of every parameter from its populated gradient.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, state: &mut AdamState<T>) -> Result<()> {
    if state.first.len() != params.len() {
        return Err(Error::Argument(format!(
            "adam state tracks {} parameters, set has {}",
            state.first.len(),
            params.len()
        )));
    }
    for p in params.iter() {
        match &p.grad {
            None => return Err(Error::MissingGradient(p.name.clone())),
            Some(g) if g.shape() != p.value.shape() => {
                return Err(Error::shape("adam_step", p.value.shape(), g.shape()))
            }
            Some(_) => {}
        }
    }
    state.step += 1;
    let c = state.config;
    let t = state.step as i32;
    let b1 = T::of(c.beta1);
    let b2 = T::of(c.beta2);
    let one = T::one();
    let bc1 = T::of(1.0 - c.beta1.powi(t));
    let bc2 = T::of(1.0 - c.beta2.powi(t));
    let lr = T::of(c.lr);
    let eps = T::of(c.eps);
    for (i, p) in params.iter_mut().enumerate() {
        let g = p.grad.as_ref().expect("checked above");
        let m = state.first[i].data_mut();
        let v = state.second[i].data_mut();
        for (((w, &gi), mi), vi) in p.value.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
