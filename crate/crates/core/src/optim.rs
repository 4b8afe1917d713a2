//! Parameter-space optimizers: plain SGD and Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    first: BTreeMap<String, Vec<T>>,
    second: BTreeMap<String, Vec<T>>,
}

/// Optimizer state. A step consumes the gradients stored in the [`ParamSet`]
/// and clears them; a parameter without a gradient is a contract violation.
#[derive(Debug, Clone)]
pub enum Optimizer<T> {
    Sgd,
    Adam(AdamState<T>),
}

impl<T: Scalar> Optimizer<T> {
    pub fn sgd() -> Self {
        Optimizer::Sgd
    }

    pub fn adam() -> Self {
        Self::adam_with(ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }

    pub fn adam_with(beta1: f64, beta2: f64, eps: f64) -> Self {
        Optimizer::Adam(AdamState {
            beta1: T::of(beta1),
            beta2: T::of(beta2),
            eps: T::of(eps),
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        })
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, lr: T) -> Result<()> {
        let missing: Vec<&str> = params
            .iter()
            .filter(|(_, t)| t.grad().is_none())
            .map(|(name, _)| name)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Contract(format!(
                "optimizer step with missing gradients for: {}",
                missing.join(", ")
            )));
        }
        match self {
            Optimizer::Sgd => {
                for (_, t) in params.iter_mut() {
                    let grad = t.grad().expect("checked above").to_vec();
                    for (v, g) in t.values_mut().iter_mut().zip(grad) {
                        *v = *v - lr * g;
                    }
                }
            }
            Optimizer::Adam(state) => {
                state.step += 1;
                let t_i32 = state.step.min(i32::MAX as u64) as i32;
                let bc1 = T::one() - state.beta1.powi(t_i32);
                let bc2 = T::one() - state.beta2.powi(t_i32);
                for (name, tensor) in params.iter_mut() {
                    let grad = tensor.grad().expect("checked above").to_vec();
                    let m = state
                        .first
                        .entry(name.to_string())
                        .or_insert_with(|| vec![T::zero(); grad.len()]);
                    let v = state
                        .second
                        .entry(name.to_string())
                        .or_insert_with(|| vec![T::zero(); grad.len()]);
                    let values = tensor.values_mut();
                    for i in 0..grad.len() {
                        let g = grad[i];
                        m[i] = state.beta1 * m[i] + (T::one() - state.beta1) * g;
                        v[i] = state.beta2 * v[i] + (T::one() - state.beta2) * g * g;
                        let m_hat = m[i] / bc1;
                        let v_hat = v[i] / bc2;
                        values[i] = values[i] - lr * m_hat / (v_hat.sqrt() + state.eps);
                    }
                }
            }
        }
        params.clear_grads();
        Ok(())
    }
}
