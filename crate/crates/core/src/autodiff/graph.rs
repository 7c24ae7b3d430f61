use std::collections::BTreeMap;

use super::params::{Gradients, ParamSet, Tensor};
use super::Real;
use crate::error::{Error, Result};

/// Handle to a node on the tape. Only valid for the graph that created it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TensorId(u32);

impl TensorId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// Geometry of a stride-2 same-padded convolution, fixed at build time.
#[derive(Clone, Copy, Debug)]
struct ConvDims {
    in_h: usize,
    in_w: usize,
    in_c: usize,
    out_h: usize,
    out_w: usize,
    out_c: usize,
    kh: usize,
    kw: usize,
    pad_top: usize,
    pad_left: usize,
}

const CONV_STRIDE: usize = 2;

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    StopGrad(TensorId),
    Conv2d { x: TensorId, w: TensorId, b: TensorId, dims: ConvDims },
    Linear { x: TensorId, w: TensorId, b: Option<TensorId> },
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    AddN(Vec<TensorId>),
    Concat(Vec<TensorId>),
    Slice { x: TensorId, start: usize },
    Scale { x: TensorId, c: f64 },
    AddScalar { x: TensorId },
    Abs(TensorId),
    Elu(TensorId),
    Relu(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Softmax(TensorId),
    LogSoftmax(TensorId),
    Sum(TensorId),
    Mean(TensorId),
    Gather { x: TensorId, index: usize },
    Reshape(TensorId),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::StopGrad(_) => "stop_grad",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddN(_) => "add_n",
            Op::Concat(_) => "concat",
            Op::Slice { .. } => "slice",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Abs(_) => "abs",
            Op::Elu(_) => "elu",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Gather { .. } => "gather",
            Op::Reshape(_) => "reshape",
        }
    }
}

struct Node<F> {
    op: Op,
    shape: Vec<usize>,
    values: Vec<F>,
    grad: Option<Vec<F>>,
    needs_grad: bool,
}

/// Append-only computation tape with eager forward evaluation.
pub struct Graph<F: Real> {
    nodes: Vec<Node<F>>,
    params: BTreeMap<String, TensorId>,
}

impl<F: Real> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Graph<F> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), params: BTreeMap::new() }
    }

    fn push(&mut self, op: Op, shape: Vec<usize>, values: Vec<F>, needs_grad: bool) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = TensorId(self.nodes.len() as u32);
        self.nodes.push(Node { op, shape, values, grad: None, needs_grad });
        id
    }

    fn node(&self, id: TensorId) -> &Node<F> {
        &self.nodes[id.idx()]
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.node(id).shape
    }

    pub fn values(&self, id: TensorId) -> &[F] {
        &self.node(id).values
    }

    /// Value of a single-element tensor.
    pub fn scalar(&self, id: TensorId) -> F {
        let n = self.node(id);
        assert_eq!(n.values.len(), 1, "scalar() on tensor of shape {:?}", n.shape);
        n.values[0]
    }

    /// Gradient of the last `backward` call with respect to this node, if any
    /// was accumulated.
    pub fn grad(&self, id: TensorId) -> Option<&[F]> {
        self.node(id).grad.as_deref()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Count of recorded operations by name, for structural assertions.
    pub fn op_census(&self) -> BTreeMap<&'static str, usize> {
        let mut census = BTreeMap::new();
        for n in &self.nodes {
            *census.entry(n.op.name()).or_insert(0) += 1;
        }
        census
    }

    /// Direct input edges of a node, for structural assertions.
    pub fn inputs_of(&self, id: TensorId) -> Vec<TensorId> {
        match &self.node(id).op {
            Op::Leaf => vec![],
            Op::StopGrad(x)
            | Op::Slice { x, .. }
            | Op::Scale { x, .. }
            | Op::AddScalar { x }
            | Op::Abs(x)
            | Op::Elu(x)
            | Op::Relu(x)
            | Op::Sigmoid(x)
            | Op::Tanh(x)
            | Op::Softmax(x)
            | Op::LogSoftmax(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Gather { x, .. }
            | Op::Reshape(x) => vec![*x],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddN(xs) | Op::Concat(xs) => xs.clone(),
            Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Conv2d { x, w, b, .. } => vec![*x, *w, *b],
        }
    }

    /// True if gradients can flow back from `id` (transitively) into any
    /// differentiable leaf.
    pub fn requires_grad(&self, id: TensorId) -> bool {
        self.node(id).needs_grad
    }

    // ----- leaves -----

    /// Constant leaf: participates in forward only.
    pub fn constant(&mut self, shape: &[usize], values: Vec<F>) -> TensorId {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "constant: shape {shape:?} does not match {} values",
            values.len()
        );
        self.push(Op::Leaf, shape.to_vec(), values, false)
    }

    pub fn scalar_constant(&mut self, v: F) -> TensorId {
        self.push(Op::Leaf, vec![1], vec![v], false)
    }

    /// Differentiable leaf bound to a named parameter. `backward` reports a
    /// gradient entry for every bound parameter, zero-filled if unused.
    pub fn param(&mut self, name: &str, tensor: &Tensor<F>) -> Result<TensorId> {
        if self.params.contains_key(name) {
            return Err(Error::contract(format!("parameter {name} bound twice")));
        }
        let id = self.push(Op::Leaf, tensor.shape.clone(), tensor.data.clone(), true);
        self.params.insert(name.to_string(), id);
        Ok(id)
    }

    /// Bind every tensor of a parameter set, returning name to id handles.
    pub fn bind(&mut self, set: &ParamSet<F>) -> Result<BTreeMap<String, TensorId>> {
        let mut out = BTreeMap::new();
        for (name, tensor) in set.iter() {
            out.insert(name.clone(), self.param(name, tensor)?);
        }
        Ok(out)
    }

    // ----- structural ops -----

    /// Identity in forward; blocks gradient flow in backward.
    pub fn stop_grad(&mut self, x: TensorId) -> TensorId {
        let (shape, values) = {
            let n = self.node(x);
            (n.shape.clone(), n.values.clone())
        };
        self.push(Op::StopGrad(x), shape, values, false)
    }

    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> TensorId {
        let n = self.node(x);
        assert_eq!(
            shape.iter().product::<usize>(),
            n.values.len(),
            "reshape: {:?} -> {shape:?} changes element count",
            n.shape
        );
        let values = n.values.clone();
        let needs = n.needs_grad;
        self.push(Op::Reshape(x), shape.to_vec(), values, needs)
    }

    pub fn concat(&mut self, xs: &[TensorId]) -> TensorId {
        assert!(!xs.is_empty(), "concat of zero tensors");
        let mut values = Vec::new();
        let mut needs = false;
        for &x in xs {
            let n = self.node(x);
            values.extend_from_slice(&n.values);
            needs |= n.needs_grad;
        }
        self.push(Op::Concat(xs.to_vec()), vec![values.len()], values, needs)
    }

    /// Contiguous sub-vector `x[start .. start + len]` of a rank-1 tensor.
    pub fn slice(&mut self, x: TensorId, start: usize, len: usize) -> TensorId {
        let n = self.node(x);
        assert!(
            start + len <= n.values.len(),
            "slice {start}..{} out of bounds for {} elements",
            start + len,
            n.values.len()
        );
        let values = n.values[start..start + len].to_vec();
        let needs = n.needs_grad;
        self.push(Op::Slice { x, start }, vec![len], values, needs)
    }

    /// Single element `x[index]` as a scalar tensor.
    pub fn gather(&mut self, x: TensorId, index: usize) -> TensorId {
        let n = self.node(x);
        assert!(index < n.values.len(), "gather index {index} out of bounds");
        let v = n.values[index];
        let needs = n.needs_grad;
        self.push(Op::Gather { x, index }, vec![1], vec![v], needs)
    }

    // ----- elementwise arithmetic -----

    fn binary_same_shape(&mut self, op_name: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa != sb {
            return Err(Error::ShapeMismatch { op: op_name, expected: sa.clone(), got: sb.clone() });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("add", a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let values: Vec<F> = na.values.iter().zip(&nb.values).map(|(&x, &y)| x + y).collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(Op::Add(a, b), shape, values, needs))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("sub", a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let values: Vec<F> = na.values.iter().zip(&nb.values).map(|(&x, &y)| x - y).collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(Op::Sub(a, b), shape, values, needs))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_same_shape("mul", a, b)?;
        let (na, nb) = (self.node(a), self.node(b));
        let values: Vec<F> = na.values.iter().zip(&nb.values).map(|(&x, &y)| x * y).collect();
        let shape = na.shape.clone();
        let needs = na.needs_grad || nb.needs_grad;
        Ok(self.push(Op::Mul(a, b), shape, values, needs))
    }

    pub fn add_n(&mut self, xs: &[TensorId]) -> Result<TensorId> {
        assert!(!xs.is_empty(), "add_n of zero tensors");
        for &x in &xs[1..] {
            self.binary_same_shape("add_n", xs[0], x)?;
        }
        let mut values = self.node(xs[0]).values.clone();
        let mut needs = self.node(xs[0]).needs_grad;
        for &x in &xs[1..] {
            let n = self.node(x);
            for (dst, &src) in values.iter_mut().zip(&n.values) {
                *dst += src;
            }
            needs |= n.needs_grad;
        }
        let shape = self.node(xs[0]).shape.clone();
        Ok(self.push(Op::AddN(xs.to_vec()), shape, values, needs))
    }

    pub fn scale(&mut self, x: TensorId, c: f64) -> TensorId {
        let n = self.node(x);
        let cf = F::c(c);
        let values: Vec<F> = n.values.iter().map(|&v| v * cf).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Scale { x, c }, shape, values, needs)
    }

    pub fn add_scalar(&mut self, x: TensorId, c: f64) -> TensorId {
        let n = self.node(x);
        let cf = F::c(c);
        let values: Vec<F> = n.values.iter().map(|&v| v + cf).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::AddScalar { x }, shape, values, needs)
    }

    // ----- activations -----

    pub fn abs(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let values: Vec<F> = n.values.iter().map(|&v| v.abs()).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Abs(x), shape, values, needs)
    }

    pub fn elu(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let one = F::one();
        let values: Vec<F> =
            n.values.iter().map(|&v| if v > F::zero() { v } else { v.exp() - one }).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Elu(x), shape, values, needs)
    }

    pub fn relu(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let values: Vec<F> = n.values.iter().map(|&v| v.max(F::zero())).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Relu(x), shape, values, needs)
    }

    pub fn sigmoid(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let one = F::one();
        let values: Vec<F> = n.values.iter().map(|&v| one / (one + (-v).exp())).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Sigmoid(x), shape, values, needs)
    }

    pub fn tanh(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let values: Vec<F> = n.values.iter().map(|&v| v.tanh()).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Tanh(x), shape, values, needs)
    }

    /// Numerically stable softmax over a rank-1 tensor.
    pub fn softmax(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let values = softmax_values(&n.values);
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::Softmax(x), shape, values, needs)
    }

    /// Numerically stable log-softmax over a rank-1 tensor.
    pub fn log_softmax(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let max = n.values.iter().cloned().fold(F::neg_infinity(), F::max);
        let sum_exp: F =
            n.values.iter().map(|&v| (v - max).exp()).fold(F::zero(), |acc, v| acc + v);
        let log_z = max + sum_exp.ln();
        let values: Vec<F> = n.values.iter().map(|&v| v - log_z).collect();
        let shape = n.shape.clone();
        let needs = n.needs_grad;
        self.push(Op::LogSoftmax(x), shape, values, needs)
    }

    // ----- reductions -----

    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        let total = n.values.iter().fold(F::zero(), |acc, &v| acc + v);
        let needs = n.needs_grad;
        self.push(Op::Sum(x), vec![1], vec![total], needs)
    }

    pub fn mean(&mut self, x: TensorId) -> TensorId {
        let n = self.node(x);
        assert!(!n.values.is_empty(), "mean of empty tensor");
        let count = F::c(n.values.len() as f64);
        let total = n.values.iter().fold(F::zero(), |acc, &v| acc + v);
        let needs = n.needs_grad;
        self.push(Op::Mean(x), vec![1], vec![total / count], needs)
    }

    // ----- dense layers -----

    /// `y = x @ w (+ b)` for a rank-1 input. `w` has shape `[in, out]` so the
    /// output dimension is contiguous in memory.
    pub fn linear(&mut self, x: TensorId, w: TensorId, b: Option<TensorId>) -> Result<TensorId> {
        let (n_in, n_out) = {
            let wn = self.node(w);
            if wn.shape.len() != 2 {
                return Err(Error::ShapeMismatch {
                    op: "linear",
                    expected: vec![0, 0],
                    got: wn.shape.clone(),
                });
            }
            (wn.shape[0], wn.shape[1])
        };
        let xn = self.node(x);
        if xn.values.len() != n_in {
            return Err(Error::ShapeMismatch {
                op: "linear",
                expected: vec![n_in],
                got: xn.shape.clone(),
            });
        }
        let mut values = match b {
            Some(bid) => {
                let bn = self.node(bid);
                if bn.values.len() != n_out {
                    return Err(Error::ShapeMismatch {
                        op: "linear",
                        expected: vec![n_out],
                        got: bn.shape.clone(),
                    });
                }
                bn.values.clone()
            }
            None => vec![F::zero(); n_out],
        };
        {
            let xv = &self.node(x).values;
            let wv = &self.node(w).values;
            for (i, &xi) in xv.iter().enumerate() {
                if xi == F::zero() {
                    continue;
                }
                let row = &wv[i * n_out..(i + 1) * n_out];
                for (dst, &wj) in values.iter_mut().zip(row) {
                    *dst += xi * wj;
                }
            }
        }
        let needs = self.node(x).needs_grad
            || self.node(w).needs_grad
            || b.map(|bid| self.node(bid).needs_grad).unwrap_or(false);
        Ok(self.push(Op::Linear { x, w, b }, vec![n_out], values, needs))
    }

    /// Stride-2 convolution with 3x3-style same padding over an `[h, w, c]`
    /// input. Weights are `[kh, kw, in_c, out_c]`, bias `[out_c]`. Padding
    /// follows the convention that splits `(out-1)*stride + k - in` evenly,
    /// with the extra row/column at the bottom/right.
    pub fn conv2d(&mut self, x: TensorId, w: TensorId, b: TensorId) -> Result<TensorId> {
        let (in_h, in_w, in_c) = {
            let xn = self.node(x);
            if xn.shape.len() != 3 {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    expected: vec![0, 0, 0],
                    got: xn.shape.clone(),
                });
            }
            (xn.shape[0], xn.shape[1], xn.shape[2])
        };
        let (kh, kw, wc_in, out_c) = {
            let wn = self.node(w);
            if wn.shape.len() != 4 {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    expected: vec![0, 0, 0, 0],
                    got: wn.shape.clone(),
                });
            }
            (wn.shape[0], wn.shape[1], wn.shape[2], wn.shape[3])
        };
        if wc_in != in_c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![kh, kw, in_c, out_c],
                got: self.node(w).shape.clone(),
            });
        }
        if self.node(b).values.len() != out_c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                expected: vec![out_c],
                got: self.node(b).shape.clone(),
            });
        }
        let out_h = in_h.div_ceil(CONV_STRIDE);
        let out_w = in_w.div_ceil(CONV_STRIDE);
        let pad_h = ((out_h - 1) * CONV_STRIDE + kh).saturating_sub(in_h);
        let pad_w = ((out_w - 1) * CONV_STRIDE + kw).saturating_sub(in_w);
        let dims = ConvDims {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kh,
            kw,
            pad_top: pad_h / 2,
            pad_left: pad_w / 2,
        };

        let mut values = vec![F::zero(); out_h * out_w * out_c];
        {
            let xv = &self.node(x).values;
            let wv = &self.node(w).values;
            let bv = &self.node(b).values;
            conv2d_forward(xv, wv, bv, &dims, &mut values);
        }
        let needs =
            self.node(x).needs_grad || self.node(w).needs_grad || self.node(b).needs_grad;
        Ok(self.push(Op::Conv2d { x, w, b, dims }, vec![out_h, out_w, out_c], values, needs))
    }

    // ----- backward -----

    /// Reverse sweep from a scalar loss. Returns one gradient per bound
    /// parameter (zero-filled when the parameter did not influence the loss).
    /// Fails if any accumulated gradient is non-finite.
    pub fn backward(&mut self, loss: TensorId) -> Result<Gradients<F>> {
        if self.node(loss).values.len() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                expected: vec![1],
                got: self.node(loss).shape.clone(),
            });
        }
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.nodes[loss.idx()].grad = Some(vec![F::one()]);

        for i in (0..=loss.idx()).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            if !node.needs_grad {
                continue;
            }
            let Some(out_grad) = node.grad.as_ref() else { continue };
            for &g in out_grad {
                if !g.is_finite() {
                    return Err(Error::NonFinite {
                        context: format!("gradient of {} node", node.op.name()),
                    });
                }
            }
            backprop_node(node, before)?;
        }

        let mut grads = Gradients::new();
        for (name, id) in &self.params {
            let n = &self.nodes[id.idx()];
            let g = n.grad.clone().unwrap_or_else(|| vec![F::zero(); n.values.len()]);
            grads.insert(name.clone(), g);
        }
        Ok(grads)
    }
}

/// Accumulate `node`'s output gradient into its inputs. All inputs live at
/// strictly smaller indices, which is what makes the split borrow sound.
fn backprop_node<F: Real>(node: &Node<F>, before: &mut [Node<F>]) -> Result<()> {
    let g = node.grad.as_ref().expect("caller checked grad").clone();
    let acc = |nodes: &mut [Node<F>], id: TensorId, f: &mut dyn FnMut(&mut [F], &[F])| {
        let n = &mut nodes[id.idx()];
        if !n.needs_grad {
            return;
        }
        let len = n.values.len();
        let values = std::mem::take(&mut n.values);
        let grad = n.grad.get_or_insert_with(|| vec![F::zero(); len]);
        f(grad, &values);
        n.values = values;
    };

    match &node.op {
        Op::Leaf | Op::StopGrad(_) => {}
        Op::Reshape(x) => acc(before, *x, &mut |dst, _| {
            for (d, &s) in dst.iter_mut().zip(&g) {
                *d += s;
            }
        }),
        Op::Concat(xs) => {
            let mut offset = 0;
            for &x in xs {
                let len = before[x.idx()].values.len();
                let piece = &g[offset..offset + len];
                acc(before, x, &mut |dst, _| {
                    for (d, &s) in dst.iter_mut().zip(piece) {
                        *d += s;
                    }
                });
                offset += len;
            }
        }
        Op::Slice { x, start } => acc(before, *x, &mut |dst, _| {
            for (d, &s) in dst[*start..*start + g.len()].iter_mut().zip(&g) {
                *d += s;
            }
        }),
        Op::Gather { x, index } => acc(before, *x, &mut |dst, _| {
            dst[*index] += g[0];
        }),
        Op::Add(a, b) => {
            acc(before, *a, &mut |dst, _| {
                for (d, &s) in dst.iter_mut().zip(&g) {
                    *d += s;
                }
            });
            acc(before, *b, &mut |dst, _| {
                for (d, &s) in dst.iter_mut().zip(&g) {
                    *d += s;
                }
            });
        }
        Op::Sub(a, b) => {
            acc(before, *a, &mut |dst, _| {
                for (d, &s) in dst.iter_mut().zip(&g) {
                    *d += s;
                }
            });
            acc(before, *b, &mut |dst, _| {
                for (d, &s) in dst.iter_mut().zip(&g) {
                    *d -= s;
                }
            });
        }
        Op::Mul(a, b) => {
            let av = before[a.idx()].values.clone();
            let bv = before[b.idx()].values.clone();
            acc(before, *a, &mut |dst, _| {
                for ((d, &s), &o) in dst.iter_mut().zip(&g).zip(&bv) {
                    *d += s * o;
                }
            });
            acc(before, *b, &mut |dst, _| {
                for ((d, &s), &o) in dst.iter_mut().zip(&g).zip(&av) {
                    *d += s * o;
                }
            });
        }
        Op::AddN(xs) => {
            for &x in xs {
                acc(before, x, &mut |dst, _| {
                    for (d, &s) in dst.iter_mut().zip(&g) {
                        *d += s;
                    }
                });
            }
        }
        Op::Scale { x, c } => {
            let cf = F::c(*c);
            acc(before, *x, &mut |dst, _| {
                for (d, &s) in dst.iter_mut().zip(&g) {
                    *d += s * cf;
                }
            });
        }
        Op::AddScalar { x } => acc(before, *x, &mut |dst, _| {
            for (d, &s) in dst.iter_mut().zip(&g) {
                *d += s;
            }
        }),
        Op::Abs(x) => acc(before, *x, &mut |dst, xv| {
            // Subgradient 0 at the origin.
            for i in 0..dst.len() {
                if xv[i] > F::zero() {
                    dst[i] += g[i];
                } else if xv[i] < F::zero() {
                    dst[i] -= g[i];
                }
            }
        }),
        Op::Elu(x) => {
            // d/dx elu(x) = 1 for x > 0, elu(x) + 1 otherwise.
            let y = &node.values;
            acc(before, *x, &mut |dst, xv| {
                for i in 0..dst.len() {
                    let d = if xv[i] > F::zero() { F::one() } else { y[i] + F::one() };
                    dst[i] += g[i] * d;
                }
            });
        }
        Op::Relu(x) => acc(before, *x, &mut |dst, xv| {
            for i in 0..dst.len() {
                if xv[i] > F::zero() {
                    dst[i] += g[i];
                }
            }
        }),
        Op::Sigmoid(x) => {
            let y = &node.values;
            acc(before, *x, &mut |dst, _| {
                for i in 0..dst.len() {
                    dst[i] += g[i] * y[i] * (F::one() - y[i]);
                }
            });
        }
        Op::Tanh(x) => {
            let y = &node.values;
            acc(before, *x, &mut |dst, _| {
                for i in 0..dst.len() {
                    dst[i] += g[i] * (F::one() - y[i] * y[i]);
                }
            });
        }
        Op::Softmax(x) => {
            // dx = y * (g - <g, y>)
            let y = &node.values;
            let dot = g.iter().zip(y).fold(F::zero(), |s, (&a, &b)| s + a * b);
            acc(before, *x, &mut |dst, _| {
                for i in 0..dst.len() {
                    dst[i] += y[i] * (g[i] - dot);
                }
            });
        }
        Op::LogSoftmax(x) => {
            // dx = g - softmax(x) * sum(g)
            let y = &node.values;
            let gsum = g.iter().fold(F::zero(), |acc, &v| acc + v);
            acc(before, *x, &mut |dst, _| {
                for i in 0..dst.len() {
                    dst[i] += g[i] - y[i].exp() * gsum;
                }
            });
        }
        Op::Sum(x) => acc(before, *x, &mut |dst, _| {
            for d in dst.iter_mut() {
                *d += g[0];
            }
        }),
        Op::Mean(x) => {
            let count = F::c(before[x.idx()].values.len() as f64);
            let per = g[0] / count;
            acc(before, *x, &mut |dst, _| {
                for d in dst.iter_mut() {
                    *d += per;
                }
            });
        }
        Op::Linear { x, w, b } => {
            let n_out = node.values.len();
            let xv = before[x.idx()].values.clone();
            let x_needs = before[x.idx()].needs_grad;
            if x_needs {
                let wv = before[w.idx()].values.clone();
                acc(before, *x, &mut |dst, _| {
                    for (i, d) in dst.iter_mut().enumerate() {
                        let row = &wv[i * n_out..(i + 1) * n_out];
                        let mut s = F::zero();
                        for (&gv, &wj) in g.iter().zip(row) {
                            s += gv * wj;
                        }
                        *d += s;
                    }
                });
            }
            acc(before, *w, &mut |dst, _| {
                for (i, &xi) in xv.iter().enumerate() {
                    if xi == F::zero() {
                        continue;
                    }
                    let row = &mut dst[i * n_out..(i + 1) * n_out];
                    for (d, &gv) in row.iter_mut().zip(&g) {
                        *d += xi * gv;
                    }
                }
            });
            if let Some(b) = b {
                acc(before, *b, &mut |dst, _| {
                    for (d, &gv) in dst.iter_mut().zip(&g) {
                        *d += gv;
                    }
                });
            }
        }
        Op::Conv2d { x, w, b, dims } => {
            if before[x.idx()].needs_grad {
                let wv = before[w.idx()].values.clone();
                acc(before, *x, &mut |dst, _| {
                    conv2d_backward_input(&g, &wv, dims, dst);
                });
            }
            let xv = before[x.idx()].values.clone();
            acc(before, *w, &mut |dst, _| {
                conv2d_backward_weights(&g, &xv, dims, dst);
            });
            acc(before, *b, &mut |dst, _| {
                for chunk in g.chunks_exact(dims.out_c) {
                    for (d, &gv) in dst.iter_mut().zip(chunk) {
                        *d += gv;
                    }
                }
            });
        }
    }
    Ok(())
}

fn softmax_values<F: Real>(xs: &[F]) -> Vec<F> {
    let max = xs.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut out: Vec<F> = xs.iter().map(|&v| (v - max).exp()).collect();
    let sum = out.iter().fold(F::zero(), |acc, &v| acc + v);
    for v in &mut out {
        *v = *v / sum;
    }
    out
}

fn conv2d_forward<F: Real>(x: &[F], w: &[F], b: &[F], d: &ConvDims, out: &mut [F]) {
    for oy in 0..d.out_h {
        for ox in 0..d.out_w {
            let dst = &mut out[(oy * d.out_w + ox) * d.out_c..][..d.out_c];
            dst.copy_from_slice(b);
            for ky in 0..d.kh {
                let iy = (oy * CONV_STRIDE + ky) as isize - d.pad_top as isize;
                if iy < 0 || iy >= d.in_h as isize {
                    continue;
                }
                for kx in 0..d.kw {
                    let ix = (ox * CONV_STRIDE + kx) as isize - d.pad_left as isize;
                    if ix < 0 || ix >= d.in_w as isize {
                        continue;
                    }
                    let xoff = (iy as usize * d.in_w + ix as usize) * d.in_c;
                    let woff = (ky * d.kw + kx) * d.in_c * d.out_c;
                    for ic in 0..d.in_c {
                        let xi = x[xoff + ic];
                        if xi == F::zero() {
                            continue;
                        }
                        let wrow = &w[woff + ic * d.out_c..][..d.out_c];
                        for (dv, &wv) in dst.iter_mut().zip(wrow) {
                            *dv += xi * wv;
                        }
                    }
                }
            }
        }
    }
}

fn conv2d_backward_input<F: Real>(g: &[F], w: &[F], d: &ConvDims, dx: &mut [F]) {
    for oy in 0..d.out_h {
        for ox in 0..d.out_w {
            let grow = &g[(oy * d.out_w + ox) * d.out_c..][..d.out_c];
            for ky in 0..d.kh {
                let iy = (oy * CONV_STRIDE + ky) as isize - d.pad_top as isize;
                if iy < 0 || iy >= d.in_h as isize {
                    continue;
                }
                for kx in 0..d.kw {
                    let ix = (ox * CONV_STRIDE + kx) as isize - d.pad_left as isize;
                    if ix < 0 || ix >= d.in_w as isize {
                        continue;
                    }
                    let xoff = (iy as usize * d.in_w + ix as usize) * d.in_c;
                    let woff = (ky * d.kw + kx) * d.in_c * d.out_c;
                    for ic in 0..d.in_c {
                        let wrow = &w[woff + ic * d.out_c..][..d.out_c];
                        let mut s = F::zero();
                        for (&gv, &wv) in grow.iter().zip(wrow) {
                            s += gv * wv;
                        }
                        dx[xoff + ic] += s;
                    }
                }
            }
        }
    }
}

fn conv2d_backward_weights<F: Real>(g: &[F], x: &[F], d: &ConvDims, dw: &mut [F]) {
    for oy in 0..d.out_h {
        for ox in 0..d.out_w {
            let grow = &g[(oy * d.out_w + ox) * d.out_c..][..d.out_c];
            for ky in 0..d.kh {
                let iy = (oy * CONV_STRIDE + ky) as isize - d.pad_top as isize;
                if iy < 0 || iy >= d.in_h as isize {
                    continue;
                }
                for kx in 0..d.kw {
                    let ix = (ox * CONV_STRIDE + kx) as isize - d.pad_left as isize;
                    if ix < 0 || ix >= d.in_w as isize {
                        continue;
                    }
                    let xoff = (iy as usize * d.in_w + ix as usize) * d.in_c;
                    let woff = (ky * d.kw + kx) * d.in_c * d.out_c;
                    for ic in 0..d.in_c {
                        let xi = x[xoff + ic];
                        if xi == F::zero() {
                            continue;
                        }
                        let wrow = &mut dw[woff + ic * d.out_c..][..d.out_c];
                        for (dv, &gv) in wrow.iter_mut().zip(grow) {
                            *dv += xi * gv;
                        }
                    }
                }
            }
        }
    }
}
