use std::collections::BTreeMap;

use rand::Rng;

use super::Real;
use crate::error::{Error, Result};

/// Dense tensor: a shape plus row-major values.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "tensor shape {shape:?} does not match {} values",
            data.len()
        );
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![F::zero(); n] }
    }

    pub fn filled(shape: Vec<usize>, v: F) -> Self {
        let n = shape.iter().product();
        Tensor { shape, data: vec![v; n] }
    }

    /// Uniform init on `[-bound, bound]` with `bound = 1 / sqrt(fan_in)`.
    pub fn fan_in_uniform(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> Self {
        assert!(fan_in > 0, "fan_in must be positive");
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| F::c(rng.gen_range(-bound..=bound))).collect();
        Tensor { shape, data }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// Named collection of tensors. Iteration order is by name, so every
/// traversal of the same set is deterministic.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamSet<F> {
    tensors: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> ParamSet<F> {
    pub fn new() -> Self {
        ParamSet { tensors: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor<F>) {
        let name = name.into();
        assert!(
            self.tensors.insert(name.clone(), tensor).is_none(),
            "duplicate parameter {name}"
        );
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<F>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<F>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<F>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<F>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_elems(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }
}

/// Per-parameter gradients keyed by name, as produced by `Graph::backward`.
#[derive(Clone, Debug, Default)]
pub struct Gradients<F> {
    grads: BTreeMap<String, Vec<F>>,
}

impl<F: Real> Gradients<F> {
    pub fn new() -> Self {
        Gradients { grads: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: String, grad: Vec<F>) {
        self.grads.insert(name, grad);
    }

    pub fn get(&self, name: &str) -> Option<&[F]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<F>)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Sum another gradient map into this one. Both must cover the same
    /// parameter names with matching lengths.
    pub fn add_assign(&mut self, other: &Gradients<F>) -> Result<()> {
        if self.grads.len() != other.grads.len() {
            return Err(Error::contract("gradient maps cover different parameters"));
        }
        for ((name, dst), (other_name, src)) in self.grads.iter_mut().zip(other.grads.iter()) {
            if name != other_name || dst.len() != src.len() {
                return Err(Error::contract(format!(
                    "gradient maps disagree at {name} vs {other_name}"
                )));
            }
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        Ok(())
    }
}

/// Convert a parameter set between float widths (used by f64 verification
/// passes over f32-trained parameters).
pub fn cast_params<A: Real, B: Real>(src: &ParamSet<A>) -> ParamSet<B> {
    let mut out = ParamSet::new();
    for (name, tensor) in src.iter() {
        let data = tensor.data.iter().map(|&v| B::c(v.to_f64())).collect();
        out.insert(name.clone(), Tensor::new(tensor.shape.clone(), data));
    }
    out
}

/// L2 norm over the concatenation of all gradient vectors, computed in f64.
pub fn global_norm<F: Real>(grads: &Gradients<F>) -> f64 {
    let mut sum = 0.0f64;
    for (_, g) in grads.iter() {
        for &v in g {
            let v = v.to_f64();
            sum += v * v;
        }
    }
    sum.sqrt()
}

/// Scale all gradients by `max_norm / norm` when the global norm exceeds
/// `max_norm`. Returns the pre-clip norm.
pub fn clip_global_norm<F: Real>(grads: &mut Gradients<F>, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        let scale = F::c(max_norm / norm);
        for g in grads.grads.values_mut() {
            for v in g.iter_mut() {
                *v = *v * scale;
            }
        }
    }
    norm
}
