use std::collections::BTreeMap;

use super::params::{Gradients, ParamSet};
use super::Real;
use crate::error::{Error, Result};

/// Adam moment decay rates and epsilon. Learning rate is passed per step so
/// schedules stay possible without touching optimizer state.
#[derive(Clone, Copy, Debug)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Bias-corrected Adam update of one tensor:
/// `m = b1*m + (1-b1)*g`, `v = b2*v + (1-b2)*g^2`,
/// `p -= lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)`.
pub(crate) fn adam_tensor_step<F: Real>(
    data: &mut [F],
    grad: &[F],
    m: &mut [F],
    v: &mut [F],
    lr: f64,
    t: u64,
    h: &AdamHyper,
) {
    debug_assert!(t >= 1, "adam step count starts at 1");
    let b1 = F::c(h.beta1);
    let om1 = F::c(1.0 - h.beta1);
    let b2 = F::c(h.beta2);
    let om2 = F::c(1.0 - h.beta2);
    let eps = F::c(h.eps);
    let inv_bc1 = F::c(1.0 / (1.0 - h.beta1.powf(t as f64)));
    let inv_bc2 = F::c(1.0 / (1.0 - h.beta2.powf(t as f64)));
    let lr = F::c(lr);
    for i in 0..data.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + om1 * g;
        v[i] = b2 * v[i] + om2 * g * g;
        let mhat = m[i] * inv_bc1;
        let vhat = v[i] * inv_bc2;
        data[i] -= lr * mhat / (vhat.sqrt() + eps);
    }
}

/// Sequential Adam optimizer over a parameter set.
#[derive(Clone, Debug)]
pub struct AdamState<F> {
    m: BTreeMap<String, Vec<F>>,
    v: BTreeMap<String, Vec<F>>,
    t: u64,
    hyper: AdamHyper,
}

impl<F: Real> AdamState<F> {
    /// Zero-initialised moments matching the given parameters.
    pub fn new(params: &ParamSet<F>, hyper: AdamHyper) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, tensor) in params.iter() {
            m.insert(name.clone(), vec![F::zero(); tensor.numel()]);
            v.insert(name.clone(), vec![F::zero(); tensor.numel()]);
        }
        AdamState { m, v, t: 0, hyper }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// Apply one update. Every parameter must have a matching gradient.
    pub fn step(&mut self, params: &mut ParamSet<F>, grads: &Gradients<F>, lr: f64) -> Result<()> {
        self.t += 1;
        for (name, tensor) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::contract(format!("no gradient for parameter {name}")))?;
            if g.len() != tensor.numel() {
                return Err(Error::contract(format!(
                    "gradient length {} does not match parameter {name} ({})",
                    g.len(),
                    tensor.numel()
                )));
            }
            let m = self.m.get_mut(name).expect("moments cover params");
            let v = self.v.get_mut(name).expect("moments cover params");
            adam_tensor_step(&mut tensor.data, g, m, v, lr, self.t, &self.hyper);
        }
        Ok(())
    }
}
