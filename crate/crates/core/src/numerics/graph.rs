//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its output value and, when any input
//! requires a gradient, enough saved state to run its backward rule. Nodes
//! only reference earlier nodes, so the tape is acyclic by construction and
//! [`Graph::backward`] is a single reverse sweep.

use std::collections::HashMap;

use super::kernels;
use super::params::{ParamId, ParamStore};
use super::tensor::{gemm, MatRef, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    ScalarMul(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax { x: Var, outer: usize, d: usize, inner: usize },
    LogSoftmax { x: Var, d: usize },
    Gelu(Var),
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, rstd: Vec<T> },
    Attention { q: Var, k: Var, v: Var, heads: usize, probs: Vec<T> },
    Conv2d { x: Var, w: Var, h: usize, wd: usize, kh: usize, kw: usize },
    DepthwiseConv2d { x: Var, k: Var, h: usize, wd: usize, kh: usize, kw: usize },
    SpaceToDepth { x: Var, h: usize, wd: usize, f: usize },
    DepthToSpace { x: Var, h: usize, wd: usize, f: usize },
    UpsampleBilinear { x: Var, h: usize, wd: usize, f: usize },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { x: Var, start: usize },
    SliceCols { x: Var, start: usize },
    Sum(Var),
    Mean(Var),
    SmoothL1 { pred: Var, target: Var, beta: T },
    Mse(Var, Var),
    Clamp { x: Var, lo: T, hi: T },
    L2NormalizeRows { x: Var, norms: Vec<T> },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::Scale(..) => "scale",
            Op::ScalarMul(..) => "scalar_mul",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Reshape(..) => "reshape",
            Op::Softmax { .. } => "softmax",
            Op::LogSoftmax { .. } => "log_softmax",
            Op::Gelu(..) => "gelu",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Attention { .. } => "attention",
            Op::Conv2d { .. } => "conv2d",
            Op::DepthwiseConv2d { .. } => "depthwise_conv2d",
            Op::SpaceToDepth { .. } => "space_to_depth",
            Op::DepthToSpace { .. } => "depth_to_space",
            Op::UpsampleBilinear { .. } => "upsample_bilinear",
            Op::ConcatRows(..) => "concat_rows",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceRows { .. } => "slice_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::SmoothL1 { .. } => "smooth_l1",
            Op::Mse(..) => "mse",
            Op::Clamp { .. } => "clamp",
            Op::L2NormalizeRows { .. } => "l2_normalize_rows",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) => {
                vec![*a, *b]
            }
            Op::ScalarMul(s, x) => vec![*s, *x],
            Op::Mse(a, b) => vec![*a, *b],
            Op::Scale(x, _)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Gelu(x)
            | Op::Sum(x)
            | Op::Mean(x) => vec![*x],
            Op::Softmax { x, .. }
            | Op::LogSoftmax { x, .. }
            | Op::SpaceToDepth { x, .. }
            | Op::DepthToSpace { x, .. }
            | Op::UpsampleBilinear { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::Clamp { x, .. }
            | Op::L2NormalizeRows { x, .. } => vec![*x],
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
            Op::Conv2d { x, w, .. } => vec![*x, *w],
            Op::DepthwiseConv2d { x, k, .. } => vec![*x, *k],
            Op::ConcatRows(v) | Op::ConcatCols(v) => v.clone(),
            Op::SmoothL1 { pred, target, .. } => vec![*pred, *target],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// One recorded operation, for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NodeRecord {
    pub op: &'static str,
    pub inputs: Vec<Var>,
    pub output: Var,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
    params: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grads: Vec::new(), params: HashMap::new(), grad_enabled: true }
    }

    /// A graph that records values only; nothing will require a gradient.
    pub fn inference() -> Self {
        Graph { grad_enabled: false, ..Self::new() }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn records(&self) -> Vec<NodeRecord> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| NodeRecord { op: n.op.name(), inputs: n.op.inputs(), output: Var(i) })
            .collect()
    }

    /// Saved attention probabilities of an [`Graph::attention`] node, laid
    /// out `heads × a × b`.
    pub fn attention_probs(&self, v: Var) -> Option<&[T]> {
        match &self.nodes[v.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: requires_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A differentiable leaf.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// Leaf for a stored parameter; one node per parameter per graph so that
    /// every use accumulates into the same gradient.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.leaf(store.value(id).clone(), !store.is_frozen(id));
        self.params.insert(id, v);
        v
    }

    /// Uses `v` as parameter `id` for the rest of this graph, e.g. to
    /// differentiate with respect to one parameter in isolation.
    pub fn bind_param(&mut self, id: ParamId, v: Var) {
        self.params.insert(id, v);
    }

    /// Gradients of every parameter leaf that received one.
    pub fn param_grads(&self) -> Vec<(ParamId, &Tensor<T>)> {
        let mut out: Vec<_> = self
            .params
            .iter()
            .filter_map(|(&id, &v)| self.grad(v).map(|g| (id, g)))
            .collect();
        out.sort_by_key(|(id, _)| *id);
        out
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = self.grad_enabled && op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    fn dims2(&self, v: Var, what: &str) -> Result<(usize, usize)> {
        self.value(v).dims2().map_err(|_| {
            Error::Shape(format!("{what}: expected a 2-D tensor, got {:?}", self.shape(v)))
        })
    }

    // ---- elementwise ----------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x + y);
        Ok(self.push(data, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x - y);
        Ok(self.push(data, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = zip_map(self.value(a), self.value(b), |x, y| x * y);
        Ok(self.push(data, Op::Mul(a, b)))
    }

    /// `x[..., j] + bias[j]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = self.value(x).last_dim();
        if self.shape(bias) != [d] {
            return Err(Error::Shape(format!(
                "add_bias: bias shape {:?} does not match trailing axis of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for row in out.data_mut().chunks_mut(d) {
            for (o, &bv) in row.iter_mut().zip(b) {
                *o += bv;
            }
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let c = T::of(c);
        let out = self.value(x).map(|v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    /// Scalar tensor times tensor.
    pub fn scalar_mul(&mut self, s: Var, x: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape(format!(
                "scalar_mul: expected a scalar, got {:?}",
                self.shape(s)
            )));
        }
        let sv = self.value(s).item();
        let out = self.value(x).map(|v| v * sv);
        Ok(self.push(out, Op::ScalarMul(s, x)))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(kernels::gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (lo, hi) = (T::of(lo), T::of(hi));
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        self.push(out, Op::Clamp { x, lo, hi })
    }

    // ---- linear algebra ------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, p) = self.dims2(a, "matmul")?;
        let (p2, q) = self.dims2(b, "matmul")?;
        if p != p2 {
            return Err(Error::Shape(format!(
                "matmul: inner extents differ, {:?} · {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); m * q];
        gemm(
            MatRef::new(self.value(a).data(), m, p),
            MatRef::new(self.value(b).data(), p, q),
            T::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::new(vec![m, q], out)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.dims2(x, "transpose")?;
        let src = self.value(x).data();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshaped(shape.to_vec())?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    // ---- normalisation and attention -------------------------------------

    /// Softmax along `axis`; rejects non-finite input.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.ndim() {
            return Err(Error::Shape(format!("softmax: axis {axis} out of range for {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(Error::NumericDomain("softmax input contains NaN or Inf".into()));
        }
        let shape = t.shape();
        let d = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out = t.clone();
        let mut buf = vec![T::zero(); d];
        for o in 0..outer {
            for i in 0..inner {
                for (j, b) in buf.iter_mut().enumerate() {
                    *b = out.data()[(o * d + j) * inner + i];
                }
                kernels::softmax_inplace(&mut buf);
                for (j, b) in buf.iter().enumerate() {
                    out.data_mut()[(o * d + j) * inner + i] = *b;
                }
            }
        }
        Ok(self.push(out, Op::Softmax { x, outer, d, inner }))
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if !t.is_finite() {
            return Err(Error::NumericDomain("log_softmax input contains NaN or Inf".into()));
        }
        let d = t.last_dim();
        let mut out = t.clone();
        for row in out.data_mut().chunks_mut(d) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Ok(self.push(out, Op::LogSoftmax { x, d }))
    }

    /// Layer normalisation over the trailing (channel) axis with affine
    /// `gamma`, `beta` of length `c`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let c = self.value(x).last_dim();
        for (p, n) in [(gamma, "gamma"), (beta, "beta")] {
            if self.shape(p) != [c] {
                return Err(Error::Shape(format!(
                    "layer_norm: {n} shape {:?} does not match channel extent {c}",
                    self.shape(p)
                )));
            }
        }
        let eps = T::of(1e-5);
        let xs = self.value(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let rows = xs.outer();
        let mut xhat = vec![T::zero(); xs.numel()];
        let mut rstd = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xs.numel()];
        let cf = T::of(c as f64);
        for r in 0..rows {
            let row = &xs.data()[r * c..(r + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / cf;
            let rs = T::one() / (var + eps).sqrt();
            rstd[r] = rs;
            for j in 0..c {
                let xh = (row[j] - mean) * rs;
                xhat[r * c + j] = xh;
                out[r * c + j] = xh * g[j] + b[j];
            }
        }
        let shape = xs.shape().to_vec();
        Ok(self.push(Tensor::new(shape, out)?, Op::LayerNorm { x, gamma, beta, xhat, rstd }))
    }

    /// Multi-head scaled dot-product attention on pre-projected inputs:
    /// per head `softmax(Q Kᵀ / √d_h) V`, heads concatenated along channels.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (a, d) = self.dims2(q, "attention")?;
        let (b, dk) = self.dims2(k, "attention")?;
        let (b2, dv) = self.dims2(v, "attention")?;
        if dk != d || dv != d || b2 != b {
            return Err(Error::Shape(format!(
                "attention: Q {:?}, K {:?}, V {:?} are incompatible",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Shape(format!("attention: width {d} not divisible by {heads} heads")));
        }
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let (qd, kd, vd) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * a * b];
        let mut out = vec![T::zero(); a * d];
        for h in 0..heads {
            let qh = kernels::head_slice(qd, a, d, h, dh);
            let kh = kernels::head_slice(kd, b, d, h, dh);
            let vh = kernels::head_slice(vd, b, d, h, dh);
            let p = &mut probs[h * a * b..(h + 1) * a * b];
            gemm(MatRef::new(&qh, a, dh), MatRef::new(&kh, b, dh).t(), T::zero(), p);
            for row in p.chunks_mut(b) {
                for s in row.iter_mut() {
                    *s *= scale;
                }
                kernels::softmax_inplace(row);
            }
            let mut oh = vec![T::zero(); a * dh];
            gemm(MatRef::new(p, a, b), MatRef::new(&vh, b, dh), T::zero(), &mut oh);
            kernels::head_write(&oh, a, d, h, dh, &mut out);
        }
        let out = Tensor::new(vec![a, d], out)?;
        Ok(self.push(out, Op::Attention { q, k, v, heads, probs }))
    }

    pub fn l2_normalize_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let d = t.last_dim();
        let mut out = t.clone();
        let mut norms = Vec::with_capacity(t.outer());
        for row in out.data_mut().chunks_mut(d) {
            let n = (row.iter().map(|&v| v * v).sum::<T>() + T::of(1e-12)).sqrt();
            norms.push(n);
            for v in row.iter_mut() {
                *v = *v / n;
            }
        }
        self.push(out, Op::L2NormalizeRows { x, norms })
    }

    // ---- spatial ----------------------------------------------------------

    fn check_map(&self, x: Var, h: usize, w: usize, what: &str) -> Result<usize> {
        let (n, c) = self.dims2(x, what)?;
        if n != h * w {
            return Err(Error::Shape(format!("{what}: {n} tokens do not form a {h}×{w} map")));
        }
        Ok(c)
    }

    /// Same-padded 2-D convolution of an `(h·w) × cin` map with weights
    /// `[kh, kw, cin, cout]`. Kernel extents must be odd.
    pub fn conv2d(&mut self, x: Var, w: Var, h: usize, wd: usize) -> Result<Var> {
        let cin = self.check_map(x, h, wd, "conv2d")?;
        let ws = self.shape(w).to_vec();
        let [kh, kw, wc, cout] = ws[..] else {
            return Err(Error::Shape(format!("conv2d: weight must be 4-D, got {ws:?}")));
        };
        if wc != cin {
            return Err(Error::Shape(format!("conv2d: weight {ws:?} expects {wc} input channels, map has {cin}")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("conv2d: kernel {kh}×{kw} must be odd")));
        }
        let col = kernels::im2col(self.value(x).data(), h, wd, cin, kh, kw);
        let mut out = vec![T::zero(); h * wd * cout];
        gemm(
            MatRef::new(&col, h * wd, kh * kw * cin),
            MatRef::new(self.value(w).data(), kh * kw * cin, cout),
            T::zero(),
            &mut out,
        );
        Ok(self.push(Tensor::new(vec![h * wd, cout], out)?, Op::Conv2d { x, w, h, wd, kh, kw }))
    }

    /// Depth-wise same-padded convolution with kernel `[kh, kw, c]`.
    pub fn depthwise_conv2d(&mut self, x: Var, k: Var, h: usize, wd: usize) -> Result<Var> {
        let c = self.check_map(x, h, wd, "depthwise_conv2d")?;
        let ks = self.shape(k).to_vec();
        let [kh, kw, kc] = ks[..] else {
            return Err(Error::Shape(format!("depthwise_conv2d: kernel must be 3-D, got {ks:?}")));
        };
        if kc != c {
            return Err(Error::Shape(format!("depthwise_conv2d: kernel {ks:?} vs {c} channels")));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("depthwise_conv2d: kernel {kh}×{kw} must be odd")));
        }
        let out = kernels::depthwise_forward(self.value(x).data(), self.value(k).data(), h, wd, c, kh, kw);
        Ok(self.push(Tensor::new(vec![h * wd, c], out)?, Op::DepthwiseConv2d { x, k, h, wd, kh, kw }))
    }

    /// Strided 2-D downsampling by folding `f×f` neighbourhoods into channels.
    pub fn space_to_depth(&mut self, x: Var, h: usize, wd: usize, f: usize) -> Result<Var> {
        let c = self.check_map(x, h, wd, "space_to_depth")?;
        if f == 0 || h % f != 0 || wd % f != 0 {
            return Err(Error::Shape(format!("space_to_depth: {h}×{wd} not divisible by {f}")));
        }
        let out = kernels::space_to_depth(self.value(x).data(), h, wd, c, f);
        let t = Tensor::new(vec![(h / f) * (wd / f), f * f * c], out)?;
        Ok(self.push(t, Op::SpaceToDepth { x, h, wd, f }))
    }

    /// Inverse of [`Graph::space_to_depth`]; `h`, `wd` are the coarse extents.
    pub fn depth_to_space(&mut self, x: Var, h: usize, wd: usize, f: usize) -> Result<Var> {
        let c = self.check_map(x, h, wd, "depth_to_space")?;
        if f == 0 || c % (f * f) != 0 {
            return Err(Error::Shape(format!("depth_to_space: {c} channels not divisible by {}", f * f)));
        }
        let co = c / (f * f);
        let out = kernels::depth_to_space(self.value(x).data(), h, wd, co, f);
        let t = Tensor::new(vec![h * f * wd * f, co], out)?;
        Ok(self.push(t, Op::DepthToSpace { x, h, wd, f }))
    }

    /// Bilinear `f×` upsampling with half-pixel centres and clamped edges;
    /// `h`, `wd` are the coarse extents.
    pub fn upsample_bilinear(&mut self, x: Var, h: usize, wd: usize, f: usize) -> Result<Var> {
        let c = self.check_map(x, h, wd, "upsample_bilinear")?;
        if f == 0 {
            return Err(Error::Shape("upsample_bilinear: factor must be positive".into()));
        }
        let out = kernels::upsample_bilinear(self.value(x).data(), h, wd, c, f);
        let t = Tensor::new(vec![h * f * wd * f, c], out)?;
        Ok(self.push(t, Op::UpsampleBilinear { x, h, wd, f }))
    }

    // ---- structural -------------------------------------------------------

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat_rows: no inputs".into()))?;
        let (_, c) = self.dims2(first, "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, pc) = self.dims2(p, "concat_rows")?;
            if pc != c {
                return Err(Error::Shape(format!(
                    "concat_rows: {:?} and {:?} differ in columns",
                    self.shape(first),
                    self.shape(p)
                )));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(vec![rows, c], data)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Shape("concat_cols: no inputs".into()))?;
        let (r, _) = self.dims2(first, "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p, "concat_cols")?;
            if pr != r {
                return Err(Error::Shape(format!(
                    "concat_cols: {:?} and {:?} differ in rows",
                    self.shape(first),
                    self.shape(p)
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(Tensor::new(vec![r, total], data)?, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::Shape(format!("slice_rows: [{start}, {}) outside {r} rows", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        Ok(self.push(Tensor::new(vec![len, c], data)?, Op::SliceRows { x, start }))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims2(x, "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::Shape(format!("slice_cols: [{start}, {}) outside {c} columns", start + len)));
        }
        let src = self.value(x).data();
        let data = (0..r).flat_map(|i| src[i * c + start..i * c + start + len].iter().copied()).collect();
        Ok(self.push(Tensor::new(vec![r, len], data)?, Op::SliceCols { x, start }))
    }

    // ---- reductions and losses -------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().copied().sum::<T>() / T::of(t.numel() as f64);
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// Mean-reduced smooth L1 (Huber with threshold `beta`).
    pub fn smooth_l1(&mut self, pred: Var, target: Var, beta: f64) -> Result<Var> {
        self.same_shape(pred, target, "smooth_l1")?;
        if beta.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(Error::Parameter(format!("smooth_l1: beta must be positive, got {beta}")));
        }
        let b = T::of(beta);
        let half = T::of(0.5);
        let p = self.value(pred).data();
        let t = self.value(target).data();
        let s: T = p
            .iter()
            .zip(t)
            .map(|(&x, &y)| {
                let d = (x - y).abs();
                if d < b {
                    half * d * d / b
                } else {
                    d - half * b
                }
            })
            .sum();
        let n = T::of(p.len() as f64);
        Ok(self.push(Tensor::scalar(s / n), Op::SmoothL1 { pred, target, beta: b }))
    }

    /// Mean squared difference.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse")?;
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let s: T = av.iter().zip(bv).map(|(&x, &y)| (x - y) * (x - y)).sum();
        let n = T::of(av.len() as f64);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse(a, b)))
    }

    // ---- backward ----------------------------------------------------------

    /// Reverse sweep from a scalar. Gradients accumulate additively across
    /// fan-out and can be read back with [`Graph::grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar output, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::full(self.shape(loss), T::one()));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else { continue };
            self.backward_node(i, &g)?;
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn acc(&mut self, v: Var, g: Vec<T>) {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(existing) => {
                for (e, x) in existing.data_mut().iter_mut().zip(g) {
                    *e += x;
                }
            }
            slot @ None => {
                *slot = Some(Tensor::new(node.value.shape().to_vec(), g).expect("grad shape"));
            }
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(&mut self, i: usize, g: &Tensor<T>) -> Result<()> {
        let gd = g.data();
        // Ops are matched by reference; each arm computes input gradients
        // into fresh buffers, then accumulates them.
        let node = &self.nodes[i];
        let mut updates: Vec<(Var, Vec<T>)> = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                updates.push((*a, gd.to_vec()));
                updates.push((*b, gd.to_vec()));
            }
            Op::Sub(a, b) => {
                updates.push((*a, gd.to_vec()));
                updates.push((*b, gd.iter().map(|&x| -x).collect()));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    updates.push((*a, gd.iter().zip(bv).map(|(&g, &y)| g * y).collect()));
                }
                if self.wants(*b) {
                    updates.push((*b, gd.iter().zip(av).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::AddBias(x, b) => {
                updates.push((*x, gd.to_vec()));
                if self.wants(*b) {
                    let d = self.value(*b).numel();
                    let mut gb = vec![T::zero(); d];
                    for row in gd.chunks(d) {
                        for (o, &v) in gb.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    updates.push((*b, gb));
                }
            }
            Op::Scale(x, c) => updates.push((*x, gd.iter().map(|&v| v * *c).collect())),
            Op::ScalarMul(s, x) => {
                let sv = self.value(*s).item();
                if self.wants(*s) {
                    let dot: T = gd.iter().zip(self.value(*x).data()).map(|(&g, &v)| g * v).sum();
                    updates.push((*s, vec![dot]));
                }
                if self.wants(*x) {
                    updates.push((*x, gd.iter().map(|&v| v * sv).collect()));
                }
            }
            Op::MatMul(a, b) => {
                let (m, p) = self.value(*a).dims2()?;
                let (_, q) = self.value(*b).dims2()?;
                if self.wants(*a) {
                    let mut ga = vec![T::zero(); m * p];
                    gemm(MatRef::new(gd, m, q), MatRef::new(self.value(*b).data(), p, q).t(), T::zero(), &mut ga);
                    updates.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![T::zero(); p * q];
                    gemm(MatRef::new(self.value(*a).data(), m, p).t(), MatRef::new(gd, m, q), T::zero(), &mut gb);
                    updates.push((*b, gb));
                }
            }
            Op::Transpose(x) => {
                let (r, c) = self.value(*x).dims2()?;
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[i * c + j] = gd[j * r + i];
                    }
                }
                updates.push((*x, gx));
            }
            Op::Reshape(x) => updates.push((*x, gd.to_vec())),
            Op::Softmax { x, outer, d, inner } => {
                let y = node.value.data();
                let mut gx = vec![T::zero(); y.len()];
                for o in 0..*outer {
                    for i in 0..*inner {
                        let idx = |j: usize| (o * d + j) * inner + i;
                        let dot: T = (0..*d).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                        for j in 0..*d {
                            gx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                        }
                    }
                }
                updates.push((*x, gx));
            }
            Op::LogSoftmax { x, d } => {
                let y = node.value.data();
                let mut gx = vec![T::zero(); y.len()];
                for ((grow, yrow), gxrow) in gd.chunks(*d).zip(y.chunks(*d)).zip(gx.chunks_mut(*d)) {
                    let s: T = grow.iter().copied().sum();
                    for ((o, &gv), &yv) in gxrow.iter_mut().zip(grow).zip(yrow) {
                        *o = gv - yv.exp() * s;
                    }
                }
                updates.push((*x, gx));
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                updates.push((*x, gd.iter().zip(xv).map(|(&g, &v)| g * kernels::gelu_grad(v)).collect()));
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v >= *lo && v <= *hi { g } else { T::zero() })
                    .collect();
                updates.push((*x, gx));
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let c = self.value(*gamma).numel();
                let gam = self.value(*gamma).data();
                let cf = T::of(c as f64);
                if self.wants(*x) {
                    let mut gx = vec![T::zero(); gd.len()];
                    for (r, &rs) in rstd.iter().enumerate() {
                        let gr = &gd[r * c..(r + 1) * c];
                        let xr = &xhat[r * c..(r + 1) * c];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..c {
                            let dxh = gr[j] * gam[j];
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 = m1 / cf;
                        m2 = m2 / cf;
                        for j in 0..c {
                            gx[r * c + j] = rs * (gr[j] * gam[j] - m1 - xr[j] * m2);
                        }
                    }
                    updates.push((*x, gx));
                }
                if self.wants(*gamma) {
                    let mut gg = vec![T::zero(); c];
                    for (gr, xr) in gd.chunks(c).zip(xhat.chunks(c)) {
                        for j in 0..c {
                            gg[j] += gr[j] * xr[j];
                        }
                    }
                    updates.push((*gamma, gg));
                }
                if self.wants(*beta) {
                    let mut gb = vec![T::zero(); c];
                    for gr in gd.chunks(c) {
                        for j in 0..c {
                            gb[j] += gr[j];
                        }
                    }
                    updates.push((*beta, gb));
                }
            }
            Op::Attention { q, k, v, heads, probs } => {
                let (a, d) = self.value(*q).dims2()?;
                let (b, _) = self.value(*k).dims2()?;
                let dh = d / heads;
                let scale = T::of(1.0 / (dh as f64).sqrt());
                let (qd, kd, vd) = (self.value(*q).data(), self.value(*k).data(), self.value(*v).data());
                let mut gq = vec![T::zero(); a * d];
                let mut gk = vec![T::zero(); b * d];
                let mut gv = vec![T::zero(); b * d];
                for h in 0..*heads {
                    let p = &probs[h * a * b..(h + 1) * a * b];
                    let go = kernels::head_slice(gd, a, d, h, dh);
                    let qh = kernels::head_slice(qd, a, d, h, dh);
                    let kh = kernels::head_slice(kd, b, d, h, dh);
                    let vh = kernels::head_slice(vd, b, d, h, dh);
                    // dV = Pᵀ dO
                    let mut gvh = vec![T::zero(); b * dh];
                    gemm(MatRef::new(p, a, b).t(), MatRef::new(&go, a, dh), T::zero(), &mut gvh);
                    kernels::head_scatter_add(&gvh, b, d, h, dh, &mut gv);
                    // dP = dO Vᵀ, then through the row softmax
                    let mut ds = vec![T::zero(); a * b];
                    gemm(MatRef::new(&go, a, dh), MatRef::new(&vh, b, dh).t(), T::zero(), &mut ds);
                    for (dsr, pr) in ds.chunks_mut(b).zip(p.chunks(b)) {
                        let dot: T = dsr.iter().zip(pr).map(|(&x, &y)| x * y).sum();
                        for (x, &y) in dsr.iter_mut().zip(pr) {
                            *x = y * (*x - dot) * scale;
                        }
                    }
                    let mut gqh = vec![T::zero(); a * dh];
                    gemm(MatRef::new(&ds, a, b), MatRef::new(&kh, b, dh), T::zero(), &mut gqh);
                    kernels::head_scatter_add(&gqh, a, d, h, dh, &mut gq);
                    let mut gkh = vec![T::zero(); b * dh];
                    gemm(MatRef::new(&ds, a, b).t(), MatRef::new(&qh, a, dh), T::zero(), &mut gkh);
                    kernels::head_scatter_add(&gkh, b, d, h, dh, &mut gk);
                }
                updates.push((*q, gq));
                updates.push((*k, gk));
                updates.push((*v, gv));
            }
            Op::Conv2d { x, w, h, wd, kh, kw } => {
                let cin = self.value(*x).last_dim();
                let cout = node.value.last_dim();
                let kk = kh * kw * cin;
                if self.wants(*w) {
                    let col = kernels::im2col(self.value(*x).data(), *h, *wd, cin, *kh, *kw);
                    let mut gw = vec![T::zero(); kk * cout];
                    gemm(MatRef::new(&col, h * wd, kk).t(), MatRef::new(gd, h * wd, cout), T::zero(), &mut gw);
                    updates.push((*w, gw));
                }
                if self.wants(*x) {
                    let mut gcol = vec![T::zero(); h * wd * kk];
                    gemm(MatRef::new(gd, h * wd, cout), MatRef::new(self.value(*w).data(), kk, cout).t(), T::zero(), &mut gcol);
                    let mut gx = vec![T::zero(); h * wd * cin];
                    kernels::col2im_add(&gcol, *h, *wd, cin, *kh, *kw, &mut gx);
                    updates.push((*x, gx));
                }
            }
            Op::DepthwiseConv2d { x, k, h, wd, kh, kw } => {
                let c = self.value(*x).last_dim();
                let mut gx = self.wants(*x).then(|| vec![T::zero(); h * wd * c]);
                let mut gk = self.wants(*k).then(|| vec![T::zero(); kh * kw * c]);
                kernels::depthwise_backward(
                    self.value(*x).data(),
                    self.value(*k).data(),
                    gd,
                    *h,
                    *wd,
                    c,
                    *kh,
                    *kw,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                if let Some(gx) = gx {
                    updates.push((*x, gx));
                }
                if let Some(gk) = gk {
                    updates.push((*k, gk));
                }
            }
            Op::SpaceToDepth { x, h, wd, f } => {
                let c = self.value(*x).last_dim();
                updates.push((*x, kernels::depth_to_space(gd, h / f, wd / f, c, *f)));
            }
            Op::DepthToSpace { x, h, wd, f } => {
                let co = node.value.last_dim();
                updates.push((*x, kernels::space_to_depth(gd, h * f, wd * f, co, *f)));
            }
            Op::UpsampleBilinear { x, h, wd, f } => {
                let c = node.value.last_dim();
                updates.push((*x, kernels::upsample_bilinear_adjoint(gd, *h, *wd, c, *f)));
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).numel();
                    updates.push((p, gd[off..off + n].to_vec()));
                    off += n;
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.last_dim();
                let rows = node.value.outer();
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).last_dim();
                    let gp = (0..rows).flat_map(|i| gd[i * total + off..i * total + off + w].iter().copied()).collect();
                    updates.push((p, gp));
                    off += w;
                }
            }
            Op::SliceRows { x, start } => {
                let xs = self.value(*x);
                let c = xs.last_dim();
                let mut gx = vec![T::zero(); xs.numel()];
                gx[start * c..start * c + gd.len()].copy_from_slice(gd);
                updates.push((*x, gx));
            }
            Op::SliceCols { x, start } => {
                let xs = self.value(*x);
                let (r, c) = xs.dims2()?;
                let len = node.value.last_dim();
                let mut gx = vec![T::zero(); r * c];
                for i in 0..r {
                    gx[i * c + start..i * c + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                updates.push((*x, gx));
            }
            Op::Sum(x) => updates.push((*x, vec![gd[0]; self.value(*x).numel()])),
            Op::Mean(x) => {
                let n = self.value(*x).numel();
                updates.push((*x, vec![gd[0] / T::of(n as f64); n]));
            }
            Op::SmoothL1 { pred, target, beta } => {
                let p = self.value(*pred).data();
                let t = self.value(*target).data();
                let scale = gd[0] / T::of(p.len() as f64);
                let gp: Vec<T> = p
                    .iter()
                    .zip(t)
                    .map(|(&x, &y)| {
                        let d = x - y;
                        let g = if d.abs() < *beta { d / *beta } else { d.signum() };
                        g * scale
                    })
                    .collect();
                if self.wants(*target) {
                    updates.push((*target, gp.iter().map(|&v| -v).collect()));
                }
                updates.push((*pred, gp));
            }
            Op::Mse(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                let scale = T::of(2.0) * gd[0] / T::of(av.len() as f64);
                let ga: Vec<T> = av.iter().zip(bv).map(|(&x, &y)| (x - y) * scale).collect();
                if self.wants(*b) {
                    updates.push((*b, ga.iter().map(|&v| -v).collect()));
                }
                updates.push((*a, ga));
            }
            Op::L2NormalizeRows { x, norms } => {
                let y = node.value.data();
                let d = node.value.last_dim();
                let mut gx = vec![T::zero(); y.len()];
                for (r, &n) in norms.iter().enumerate() {
                    let yr = &y[r * d..(r + 1) * d];
                    let gr = &gd[r * d..(r + 1) * d];
                    let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                    for j in 0..d {
                        gx[r * d + j] = (gr[j] - yr[j] * dot) / n;
                    }
                }
                updates.push((*x, gx));
            }
        }
        for (v, gv) in updates {
            self.acc(v, gv);
        }
        Ok(())
    }
}

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data).expect("shapes checked by caller")
}
