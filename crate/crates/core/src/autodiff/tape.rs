//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends one node holding its output value and whatever
//! it needs for the backward rule. Inputs always precede their consumers, so
//! a single reverse sweep visits nodes in valid order.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};

use super::conv::{self, ConvGeom};
use super::scalar::{matmul_acc, matmul_tn_acc};
use super::{Scalar, Tensor, TensorError};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Named parameter tensors, iterated in name order.
pub type Params<T = f32> = BTreeMap<String, Tensor<T>>;

/// Parameter name → leaf variable on one tape.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: BTreeMap<String, Var>,
}

impl BoundParams {
    pub fn get(&self, name: &str) -> Result<Var, TensorError> {
        self.vars.get(name).copied().ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

enum Op<T> {
    Leaf,
    Conv2d { input: usize, weight: usize, bias: usize, geom: ConvGeom, cols: Vec<T> },
    Deconv2d { input: usize, weight: usize, bias: usize, geom: ConvGeom },
    Linear { input: usize, weight: usize, bias: usize },
    Relu(usize),
    Clamp01(usize),
    Softmax(usize),
    LogSoftmax(usize),
    Reshape(usize),
    Concat(Vec<usize>),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Square(usize),
    Sum(usize),
    Mean(usize),
    Index(usize, usize),
    AddN(Vec<usize>),
    Mse(usize, usize),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records forward computations for one backward pass.
///
/// A tape is single-threaded and cheap to create; build a fresh one per
/// forward pass. `backward` does not consume it and may be called again,
/// always producing identical gradients.
pub struct Tape<T: Scalar = f32> {
    id: u64,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed), nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, false)
    }

    /// A leaf that gradients flow into.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push_leaf(value, true)
    }

    /// Register every entry of `params` as a trainable leaf.
    pub fn bind(&mut self, params: &Params<T>) -> BoundParams {
        let vars = params.iter().map(|(name, t)| (name.clone(), self.param(t.clone()))).collect();
        BoundParams { vars }
    }

    /// Register `params` as constants (inference, or frozen modules).
    pub fn bind_frozen(&mut self, params: &Params<T>) -> BoundParams {
        let vars = params.iter().map(|(name, t)| (name.clone(), self.constant(t.clone()))).collect();
        BoundParams { vars }
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[self.idx(v).expect("value(): variable from another tape")].value
    }

    /// Same value, cut off from the gradient.
    pub fn detach(&mut self, v: Var) -> Result<Var, TensorError> {
        let i = self.idx(v)?;
        let value = self.nodes[i].value.clone();
        Ok(self.push_leaf(value, false))
    }

    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (xi, wi, bi) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        let bs = self.nodes[bi].value.shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::ShapeMismatch { op: "conv2d", lhs: xs, rhs: ws });
        }
        if ws[1] != xs[0] {
            return Err(TensorError::ShapeMismatch { op: "conv2d channels", lhs: xs, rhs: ws });
        }
        if bs != [ws[0]] {
            return Err(TensorError::ShapeMismatch { op: "conv2d bias", lhs: ws, rhs: bs });
        }
        let geom = ConvGeom::new(xs[0], xs[1], xs[2], ws[2], stride, pad)?;
        let (out, cols) = conv::conv_forward(&geom, self.nodes[xi].value.data(), self.nodes[wi].value.data(), self.nodes[bi].value.data());
        let value = Tensor::new(&[ws[0], geom.out_h, geom.out_w], out)?;
        Ok(self.push(value, Op::Conv2d { input: xi, weight: wi, bias: bi, geom, cols }, &[xi, wi, bi]))
    }

    /// Transposed convolution; `weight` is `[C_in, C_out, k, k]`.
    pub fn deconv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let (xi, wi, bi) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let xs = self.nodes[xi].value.shape().to_vec();
        let ws = self.nodes[wi].value.shape().to_vec();
        let bs = self.nodes[bi].value.shape().to_vec();
        if xs.len() != 3 || ws.len() != 4 || ws[2] != ws[3] {
            return Err(TensorError::ShapeMismatch { op: "deconv2d", lhs: xs, rhs: ws });
        }
        if ws[0] != xs[0] {
            return Err(TensorError::ShapeMismatch { op: "deconv2d channels", lhs: xs, rhs: ws });
        }
        if bs != [ws[1]] {
            return Err(TensorError::ShapeMismatch { op: "deconv2d bias", lhs: ws, rhs: bs });
        }
        let k = ws[2];
        let oh = conv::deconv_out_size(xs[1], k, stride, pad)?;
        let ow = conv::deconv_out_size(xs[2], k, stride, pad)?;
        let geom = ConvGeom::new(ws[1], oh, ow, k, stride, pad)?;
        debug_assert_eq!((geom.out_h, geom.out_w), (xs[1], xs[2]));
        let out = conv::deconv_forward(&geom, self.nodes[xi].value.data(), self.nodes[wi].value.data(), self.nodes[bi].value.data());
        let value = Tensor::new(&[ws[1], oh, ow], out)?;
        Ok(self.push(value, Op::Deconv2d { input: xi, weight: wi, bias: bi, geom }, &[xi, wi, bi]))
    }

    /// Dense layer `W·x + b` with `W: [out, in]`; `x` may have any shape with `in` elements.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var, TensorError> {
        let (xi, wi, bi) = (self.idx(input)?, self.idx(weight)?, self.idx(bias)?);
        let ws = self.nodes[wi].value.shape().to_vec();
        let x = &self.nodes[xi].value;
        if ws.len() != 2 || ws[1] != x.numel() {
            return Err(TensorError::ShapeMismatch { op: "linear", lhs: x.shape().to_vec(), rhs: ws });
        }
        if self.nodes[bi].value.shape() != [ws[0]] {
            return Err(TensorError::ShapeMismatch { op: "linear bias", lhs: ws, rhs: self.nodes[bi].value.shape().to_vec() });
        }
        let mut out = self.nodes[bi].value.data().to_vec();
        matmul_acc(ws[0], ws[1], 1, self.nodes[wi].value.data(), x.data(), &mut out);
        let value = Tensor::new(&[ws[0]], out)?;
        Ok(self.push(value, Op::Linear { input: xi, weight: wi, bias: bi }, &[xi, wi, bi]))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, |v| v.max(T::zero()), Op::Relu)
    }

    /// Hard clamp into `[0, 1]`.
    pub fn clamp01(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, |v| v.max(T::zero()).min(T::one()), Op::Clamp01)
    }

    pub fn square(&mut self, x: Var) -> Result<Var, TensorError> {
        self.unary(x, |v| v * v, Op::Square)
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Result<Var, TensorError> {
        self.unary(x, |v| v * factor, |i| Op::Scale(i, factor))
    }

    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let value = softmax_of(&self.nodes[xi].value);
        Ok(self.push(value, Op::Softmax(xi), &[xi]))
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let src = self.nodes[xi].value.data();
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let log_total = src.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let out = src.iter().map(|&v| (v - max) - log_total).collect();
        let value = Tensor::new(self.nodes[xi].value.shape(), out)?;
        Ok(self.push(value, Op::LogSoftmax(xi), &[xi]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let value = self.nodes[xi].value.clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(xi), &[xi]))
    }

    /// Flat concatenation of all inputs.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>, _>>()?;
        if idx.is_empty() {
            return Err(TensorError::Empty("concat"));
        }
        let data: Vec<T> = idx.iter().flat_map(|&i| self.nodes[i].value.data().iter().copied()).collect();
        let value = Tensor::from_vec(data);
        Ok(self.push(value, Op::Concat(idx.clone()), &idx))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "sub", |x, y| x - y, Op::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let s = self.nodes[xi].value.data().iter().copied().sum();
        Ok(self.push(Tensor::scalar(s), Op::Sum(xi), &[xi]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let t = &self.nodes[xi].value;
        let s = t.data().iter().copied().sum::<T>() / T::from_f64(t.numel() as f64);
        Ok(self.push(Tensor::scalar(s), Op::Mean(xi), &[xi]))
    }

    /// Element `i` of the flattened input, as a scalar.
    pub fn index(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let t = &self.nodes[xi].value;
        let v = *t.data().get(i).ok_or(TensorError::IndexOutOfRange { index: i, len: t.numel() })?;
        Ok(self.push(Tensor::scalar(v), Op::Index(xi, i), &[xi]))
    }

    /// Elementwise sum of equally shaped inputs.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let idx = parts.iter().map(|&p| self.idx(p)).collect::<Result<Vec<_>, _>>()?;
        let first = *idx.first().ok_or(TensorError::Empty("add_n"))?;
        let mut acc = self.nodes[first].value.clone();
        for &i in &idx[1..] {
            acc.check_same_shape("add_n", &self.nodes[i].value)?;
            for (a, &b) in acc.data_mut().iter_mut().zip(self.nodes[i].value.data()) {
                *a += b;
            }
        }
        Ok(self.push(acc, Op::AddN(idx.clone()), &idx))
    }

    /// `mean((a − b)²)` as a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        ta.check_same_shape("mse", tb)?;
        let n = T::from_f64(ta.numel() as f64);
        let s = ta.data().iter().zip(tb.data()).map(|(&x, &y)| (x - y) * (x - y)).sum::<T>() / n;
        Ok(self.push(Tensor::scalar(s), Op::Mse(ai, bi), &[ai, bi]))
    }

    /// Gradients of the scalar `loss` with respect to every variable on the tape.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, TensorError> {
        let li = self.idx(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(TensorError::NotScalar(self.nodes[li].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![T::one()]);

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { tape: self.id, grads, shapes })
    }

    fn propagate(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let val = |j: usize| self.nodes[j].value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias, geom, cols } => {
                let want_input = self.nodes[*input].requires_grad;
                let mut dw = vec![T::zero(); self.nodes[*weight].value.numel()];
                let mut db = vec![T::zero(); self.nodes[*bias].value.numel()];
                let dx = conv::conv_backward(geom, cols, val(*weight), g, &mut dw, &mut db, want_input);
                self.accumulate(grads, *weight, &dw);
                self.accumulate(grads, *bias, &db);
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, &dx);
                }
            }
            Op::Deconv2d { input, weight, bias, geom } => {
                let want_input = self.nodes[*input].requires_grad;
                let mut dw = vec![T::zero(); self.nodes[*weight].value.numel()];
                let mut db = vec![T::zero(); self.nodes[*bias].value.numel()];
                let dx = conv::deconv_backward(geom, val(*input), val(*weight), g, &mut dw, &mut db, want_input);
                self.accumulate(grads, *weight, &dw);
                self.accumulate(grads, *bias, &db);
                if let Some(dx) = dx {
                    self.accumulate(grads, *input, &dx);
                }
            }
            Op::Linear { input, weight, bias } => {
                let (out_f, in_f) = (g.len(), self.nodes[*input].value.numel());
                if self.nodes[*weight].requires_grad {
                    let x = val(*input);
                    let mut dw = vec![T::zero(); out_f * in_f];
                    for (row, &go) in dw.chunks_exact_mut(in_f).zip(g) {
                        for (d, &xv) in row.iter_mut().zip(x) {
                            *d = go * xv;
                        }
                    }
                    self.accumulate(grads, *weight, &dw);
                }
                self.accumulate(grads, *bias, g);
                if self.nodes[*input].requires_grad {
                    let mut dx = vec![T::zero(); in_f];
                    matmul_tn_acc(in_f, out_f, 1, val(*weight), g, &mut dx);
                    self.accumulate(grads, *input, &dx);
                }
            }
            Op::Relu(x) => {
                let d: Vec<T> = val(*x).iter().zip(g).map(|(&v, &gv)| if v > T::zero() { gv } else { T::zero() }).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Clamp01(x) => {
                let d: Vec<T> = val(*x).iter().zip(g).map(|(&v, &gv)| if v >= T::zero() && v <= T::one() { gv } else { T::zero() }).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Square(x) => {
                let two = T::from_f64(2.0);
                let d: Vec<T> = val(*x).iter().zip(g).map(|(&v, &gv)| two * v * gv).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Scale(x, f) => {
                let d: Vec<T> = g.iter().map(|&gv| gv * *f).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Softmax(x) => {
                let y = node.value.data();
                let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                let d: Vec<T> = y.iter().zip(g).map(|(&yv, &gv)| yv * (gv - dot)).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::LogSoftmax(x) => {
                let total: T = g.iter().copied().sum();
                let d: Vec<T> = node.value.data().iter().zip(g).map(|(&lv, &gv)| gv - lv.exp() * total).collect();
                self.accumulate(grads, *x, &d);
            }
            Op::Reshape(x) => self.accumulate(grads, *x, g),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.nodes[p].value.numel();
                    self.accumulate(grads, p, &g[offset..offset + n]);
                    offset += n;
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g);
                self.accumulate(grads, *b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g);
                let neg: Vec<T> = g.iter().map(|&v| -v).collect();
                self.accumulate(grads, *b, &neg);
            }
            Op::Mul(a, b) => {
                let da: Vec<T> = val(*b).iter().zip(g).map(|(&y, &gv)| y * gv).collect();
                let db: Vec<T> = val(*a).iter().zip(g).map(|(&x, &gv)| x * gv).collect();
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }
            Op::Sum(x) => {
                let d = vec![g[0]; self.nodes[*x].value.numel()];
                self.accumulate(grads, *x, &d);
            }
            Op::Mean(x) => {
                let n = self.nodes[*x].value.numel();
                let d = vec![g[0] / T::from_f64(n as f64); n];
                self.accumulate(grads, *x, &d);
            }
            Op::Index(x, k) => {
                let mut d = vec![T::zero(); self.nodes[*x].value.numel()];
                d[*k] = g[0];
                self.accumulate(grads, *x, &d);
            }
            Op::AddN(parts) => {
                for &p in parts {
                    self.accumulate(grads, p, g);
                }
            }
            Op::Mse(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let scale = T::from_f64(2.0) * g[0] / T::from_f64(va.len() as f64);
                let da: Vec<T> = va.iter().zip(vb).map(|(&x, &y)| scale * (x - y)).collect();
                let db: Vec<T> = da.iter().map(|&v| -v).collect();
                self.accumulate(grads, *a, &da);
                self.accumulate(grads, *b, &db);
            }
        }
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], j: usize, d: &[T]) {
        if !self.nodes[j].requires_grad {
            return;
        }
        match &mut grads[j] {
            Some(acc) => {
                for (a, &v) in acc.iter_mut().zip(d) {
                    *a += v;
                }
            }
            slot @ None => *slot = Some(d.to_vec()),
        }
    }

    fn idx(&self, v: Var) -> Result<usize, TensorError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(TensorError::ForeignVar);
        }
        Ok(v.index)
    }

    fn push_leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        debug_assert!(!inputs.iter().all(|&i| self.nodes[i].value.is_finite()) || value.is_finite(), "non-finite output from finite inputs");
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: impl FnOnce(usize) -> Op<T>) -> Result<Var, TensorError> {
        let xi = self.idx(x)?;
        let t = &self.nodes[xi].value;
        let value = Tensor::new(t.shape(), t.data().iter().map(|&v| f(v)).collect())?;
        Ok(self.push(value, op(xi), &[xi]))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        op: impl FnOnce(usize, usize) -> Op<T>,
    ) -> Result<Var, TensorError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        let (ta, tb) = (&self.nodes[ai].value, &self.nodes[bi].value);
        ta.check_same_shape(name, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(ta.shape(), data)?;
        Ok(self.push(value, op(ai, bi), &[ai, bi]))
    }
}

fn softmax_of<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let max = t.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = t.data().iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    Tensor::new(t.shape(), exps.into_iter().map(|e| e / total).collect()).expect("softmax shape")
}

/// Result of one backward sweep.
pub struct Gradients<T> {
    tape: u64,
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Result<Tensor<T>, TensorError> {
        if v.tape != self.tape || v.index >= self.grads.len() {
            return Err(TensorError::ForeignVar);
        }
        let shape = &self.shapes[v.index];
        Ok(match &self.grads[v.index] {
            Some(g) => Tensor::new(shape, g.clone())?,
            None => Tensor::zeros(shape),
        })
    }

    /// Gradients for every bound parameter, keyed by name.
    pub fn named(&self, bound: &BoundParams) -> Result<BTreeMap<String, Vec<T>>, TensorError> {
        bound.iter().map(|(name, &v)| Ok((name.clone(), self.wrt(v)?.into_data()))).collect()
    }
}
