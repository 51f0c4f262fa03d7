//! Reverse-mode differentiation over a dynamically recorded graph.
//!
//! Every operation appends a node holding its forward value and enough
//! context to propagate gradients. [`Graph::backward`] walks the nodes in
//! reverse insertion order, which is a valid topological order because a
//! node can only reference nodes created before it.

use super::kernels::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Norm threshold below which a cosine is treated as degenerate.
pub const COSINE_EPS: f64 = 1e-12;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul { a: Var, b: Var, trans_b: bool },
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Sigmoid(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Square(Var),
    Softmax { x: Var, axis: usize },
    LayerNorm { x: Var, inv_std: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Reshape(Var),
    Permute { x: Var, axes: Vec<usize> },
    Gather { x: Var, axis: usize, indices: Vec<usize> },
    Concat { inputs: Vec<Var>, axis: usize },
    Expand { x: Var, axis: usize, n: usize },
    StraightThrough { soft: Var },
    Clamp { x: Var, lo: f64, hi: f64 },
    Norm(Var),
    RowCosine { a: Var, b: Var, degenerate: Vec<bool> },
    Entropy(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph. Build it, call [`Graph::backward`] once
/// on a scalar, then read gradients with [`Graph::grad`].
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let len = shape[axis];
    let inner = shape[axis + 1..].iter().product();
    (outer, len, inner)
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

fn permute_data(data: &[f64], shape: &[usize], axes: &[usize]) -> (Vec<f64>, Vec<usize>) {
    let nd = shape.len();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let mut in_strides = vec![1usize; nd];
    for d in (0..nd.saturating_sub(1)).rev() {
        in_strides[d] = in_strides[d + 1] * shape[d + 1];
    }
    // stride in the input for each output axis
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(data.len());
    let mut idx = vec![0usize; nd];
    let mut offset = 0usize;
    for _ in 0..data.len() {
        out.push(data[offset]);
        for d in (0..nd).rev() {
            idx[d] += 1;
            offset += strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            offset -= strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    (out, out_shape)
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf: no gradient is tracked.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Copy of `v` cut from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass with respect to `v`. Nodes that
    /// do not depend on any trainable leaf, or that were not reached, have
    /// no gradient.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::from_parts(self.shape(v).to_vec(), g.clone()))
    }

    /// Like [`Graph::grad`] but returns zeros for unreached nodes.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v).unwrap_or_else(|| Tensor::zeros(self.shape(v)))
    }

    // ---- elementwise binary ----

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if !is_suffix(bv.shape(), av.shape()) {
            return Err(Error::shape(op, av.shape(), bv.shape()));
        }
        let bd = bv.data();
        let n = bd.len();
        Ok(av
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, bd[i % n]))
            .collect())
    }

    /// Elementwise `a + b`. `b` may have a shape equal to a suffix of `a`'s
    /// shape, in which case it is repeated over the leading axes.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary("add", a, b, |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary("sub", a, b, |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary("mul", a, b, |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let data = self.binary("div", a, b, |x, y| x / y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(Tensor::from_parts(shape, data), Op::Div(a, b), &[a, b]))
    }

    // ---- elementwise unary ----

    fn unary(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let v = &self.nodes[x.0].value;
        let data = v.data().iter().map(|&t| f(t)).collect();
        let value = Tensor::from_parts(v.shape().to_vec(), data);
        self.push(value, op, &[x])
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::Scale(x, c), |t| t * c)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, Op::AddScalar(x), |t| t + c)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sigmoid(x), |t| {
            if t >= 0.0 {
                1.0 / (1.0 + (-t).exp())
            } else {
                let e = t.exp();
                e / (1.0 + e)
            }
        })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Op::Relu(x), |t| if t > 0.0 { t } else { 0.0 })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Op::Tanh(x), f64::tanh)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Op::Log(x), f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Op::Square(x), |t| t * t)
    }

    /// Clamps values to `[lo, hi]`; clamped entries pass no gradient.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, Op::Clamp { x, lo, hi }, |t| t.clamp(lo, hi))
    }

    // ---- products ----

    /// `a[m×k] · b[k×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a[m×k] · b[n×k]ᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape("matmul", sa, sb));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape("matmul", sa, sb));
        }
        let mut out = vec![0.0; m * n];
        if trans_b {
            gemm_nt(av.data(), bv.data(), &mut out, m, k, n);
        } else {
            gemm_nn(av.data(), bv.data(), &mut out, m, k, n);
        }
        let value = Tensor::from_parts(vec![m, n], out);
        Ok(self.push(value, Op::MatMul { a, b, trans_b }, &[a, b]))
    }

    /// Batched `a[t×m×k] · b[t×k×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, false)
    }

    /// Batched `a[t×m×k] · b[t×n×k]ᵀ`.
    pub fn bmm_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bmm_impl(a, b, true)
    }

    fn bmm_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (sa, sb) = (av.shape(), bv.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] {
            return Err(Error::shape("bmm", sa, sb));
        }
        let (t, m, k) = (sa[0], sa[1], sa[2]);
        let (kb, n) = if trans_b { (sb[2], sb[1]) } else { (sb[1], sb[2]) };
        if k != kb {
            return Err(Error::shape("bmm", sa, sb));
        }
        let mut out = vec![0.0; t * m * n];
        for i in 0..t {
            let ab = &av.data()[i * m * k..(i + 1) * m * k];
            let bb = &bv.data()[i * k * n..(i + 1) * k * n];
            let cb = &mut out[i * m * n..(i + 1) * m * n];
            if trans_b {
                gemm_nt(ab, bb, cb, m, k, n);
            } else {
                gemm_nn(ab, bb, cb, m, k, n);
            }
        }
        let value = Tensor::from_parts(vec![t, m, n], out);
        Ok(self.push(value, Op::BatchMatMul { a, b, trans_b }, &[a, b]))
    }

    /// `x[..., in] · w[out×in]ᵀ + b[out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.is_empty() || ws.len() != 2 || ws[1] != xs[xs.len() - 1] {
            return Err(Error::shape("linear", &xs, &ws));
        }
        let inner = xs[xs.len() - 1];
        let rows = xs.iter().product::<usize>() / inner;
        let flat = if xs.len() == 2 { x } else { self.reshape(x, &[rows, inner])? };
        let mut y = self.matmul_nt(flat, w)?;
        if let Some(b) = b {
            y = self.add(y, b)?;
        }
        if xs.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = xs.clone();
        *out_shape.last_mut().unwrap() = ws[0];
        self.reshape(y, &out_shape)
    }

    // ---- normalisation ----

    /// Numerically stabilised softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis >= v.ndim() {
            return Err(Error::Parameter(format!(
                "softmax axis {axis} out of range for shape {:?}",
                v.shape()
            )));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * len * inner + i;
                let mut max = f64::NEG_INFINITY;
                for j in 0..len {
                    max = max.max(src[base + j * inner]);
                }
                let mut sum = 0.0;
                for j in 0..len {
                    let e = (src[base + j * inner] - max).exp();
                    out[base + j * inner] = e;
                    sum += e;
                }
                for j in 0..len {
                    out[base + j * inner] /= sum;
                }
            }
        }
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        Ok(self.push(value, Op::Softmax { x, axis }, &[x]))
    }

    /// Normalises the last axis to zero mean and unit (population) variance.
    pub fn layer_norm(&mut self, x: Var, eps: f64) -> Var {
        let v = &self.nodes[x.0].value;
        let d = *v.shape().last().unwrap_or(&1);
        let src = v.data();
        let rows = src.len() / d;
        let mut out = vec![0.0; src.len()];
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &src[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / d as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for (o, &t) in out[r * d..(r + 1) * d].iter_mut().zip(row) {
                *o = (t - mean) * inv;
            }
            inv_std.push(inv);
        }
        let value = Tensor::from_parts(v.shape().to_vec(), out);
        self.push(value, Op::LayerNorm { x, inv_std }, &[x])
    }

    // ---- reductions ----

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis >= v.ndim() {
            return Err(Error::Parameter(format!(
                "reduction axis {axis} out of range for shape {:?}",
                v.shape()
            )));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..len {
                let s = &src[(o * len + j) * inner..(o * len + j + 1) * inner];
                for (acc, &t) in out[o * inner..(o + 1) * inner].iter_mut().zip(s) {
                    *acc += t;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|t| *t /= len as f64);
        }
        let mut shape = v.shape().to_vec();
        shape.remove(axis);
        let value = Tensor::from_parts(shape, out);
        let op = if mean {
            Op::MeanAxis { x, axis }
        } else {
            Op::SumAxis { x, axis }
        };
        Ok(self.push(value, op, &[x]))
    }

    /// Sums over `axis`, removing it.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    /// Averages over `axis`, removing it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    /// Euclidean norm over all elements.
    pub fn l2_norm(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().map(|t| t * t).sum::<f64>().sqrt();
        self.push(Tensor::scalar(s), Op::Norm(x), &[x])
    }

    /// Frobenius norm of a matrix (or any tensor, flattened).
    pub fn frobenius_norm(&mut self, x: Var) -> Var {
        self.l2_norm(x)
    }

    /// Shannon entropy `-Σ p ln p` over all elements, with `0 ln 0 = 0`.
    pub fn entropy(&mut self, p: Var) -> Var {
        let h = -self
            .value(p)
            .data()
            .iter()
            .map(|&t| if t > 0.0 { t * t.ln() } else { 0.0 })
            .sum::<f64>();
        self.push(Tensor::scalar(h), Op::Entropy(p), &[p])
    }

    /// Cosine similarity between matching rows of `a` and `b` along the last
    /// axis. Rows where either norm is below [`COSINE_EPS`] yield 0 and pass
    /// no gradient; their count is returned alongside.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<(Var, usize)> {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if av.shape() != bv.shape() || av.ndim() == 0 {
            return Err(Error::shape("cosine", av.shape(), bv.shape()));
        }
        let d = *av.shape().last().unwrap();
        let rows = av.len() / d;
        let mut out = Vec::with_capacity(rows);
        let mut degenerate = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = &av.data()[r * d..(r + 1) * d];
            let y = &bv.data()[r * d..(r + 1) * d];
            let nx = x.iter().map(|t| t * t).sum::<f64>().sqrt();
            let ny = y.iter().map(|t| t * t).sum::<f64>().sqrt();
            if nx < COSINE_EPS || ny < COSINE_EPS {
                out.push(0.0);
                degenerate.push(true);
            } else {
                let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
                out.push(dot / (nx * ny));
                degenerate.push(false);
            }
        }
        let count = degenerate.iter().filter(|&&d| d).count();
        let shape = av.shape()[..av.ndim() - 1].to_vec();
        let value = Tensor::from_parts(shape, out);
        Ok((self.push(value, Op::RowCosine { a, b, degenerate }, &[a, b]), count))
    }

    // ---- shape manipulation ----

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let n: usize = shape.iter().product();
        if n != v.len() {
            return Err(Error::shape("reshape", v.shape(), shape));
        }
        let value = Tensor::from_parts(shape.to_vec(), v.data().to_vec());
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let v = self.value(x);
        let nd = v.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::shape("permute", v.shape(), axes));
        }
        let (data, shape) = permute_data(v.data(), v.shape(), axes);
        let value = Tensor::from_parts(shape, data);
        Ok(self.push(value, Op::Permute { x, axes: axes.to_vec() }, &[x]))
    }

    /// Transpose of a matrix.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.value(x).ndim() != 2 {
            return Err(Error::shape("transpose", self.shape(x), &[]));
        }
        self.permute(x, &[1, 0])
    }

    /// Selects `indices` along `axis`.
    pub fn gather(&mut self, x: Var, axis: usize, indices: &[usize]) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis >= v.ndim() || indices.is_empty() || indices.iter().any(|&i| i >= v.shape()[axis]) {
            return Err(Error::shape("gather", v.shape(), indices));
        }
        let (outer, len, inner) = split_axis(v.shape(), axis);
        let src = v.data();
        let mut out = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &j in indices {
                let start = (o * len + j) * inner;
                out.extend_from_slice(&src[start..start + inner]);
            }
        }
        let mut shape = v.shape().to_vec();
        shape[axis] = indices.len();
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(
            value,
            Op::Gather {
                x,
                axis,
                indices: indices.to_vec(),
            },
            &[x],
        ))
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::Parameter("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(Error::shape("concat", &base, &[axis]));
        }
        let mut total = 0;
        for v in inputs {
            let s = self.shape(*v);
            let compatible = s.len() == base.len()
                && s.iter().enumerate().all(|(d, &n)| d == axis || n == base[d]);
            if !compatible {
                return Err(Error::shape("concat", &base, s));
            }
            total += s[axis];
        }
        let (outer, _, inner) = split_axis(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in inputs {
                let t = self.value(*v);
                let chunk = t.shape()[axis] * inner;
                out.extend_from_slice(&t.data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Inserts a new axis of size `n` at position `axis`, repeating the data.
    pub fn expand(&mut self, x: Var, axis: usize, n: usize) -> Result<Var> {
        let v = &self.nodes[x.0].value;
        if axis > v.ndim() || n == 0 {
            return Err(Error::shape("expand", v.shape(), &[axis, n]));
        }
        let outer: usize = v.shape()[..axis].iter().product();
        let inner: usize = v.shape()[axis..].iter().product();
        let src = v.data();
        let mut out = Vec::with_capacity(src.len() * n);
        for o in 0..outer {
            for _ in 0..n {
                out.extend_from_slice(&src[o * inner..(o + 1) * inner]);
            }
        }
        let mut shape = v.shape().to_vec();
        shape.insert(axis, n);
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(value, Op::Expand { x, axis, n }, &[x]))
    }

    /// Forward value `hard`, backward identity into `soft`.
    pub fn straight_through(&mut self, hard: Tensor, soft: Var) -> Result<Var> {
        if hard.shape() != self.shape(soft) {
            return Err(Error::shape("straight_through", hard.shape(), self.shape(soft)));
        }
        Ok(self.push(hard, Op::StraightThrough { soft }, &[soft]))
    }

    // ---- backward ----

    /// Propagates gradients from the scalar `loss` to every node it depends on.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::shape("backward", self.shape(loss), &[]));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            for (input, contrib) in self.node_backward(i, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                    slot @ None => *slot = Some(contrib),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of a suffix-broadcast operand: sums over the repeated axes.
    fn reduce_to(&self, v: Var, full: impl Iterator<Item = f64>) -> Vec<f64> {
        let n = self.value(v).len();
        let mut out = vec![0.0; n];
        for (i, t) in full.enumerate() {
            out[i % n] += t;
        }
        out
    }

    fn node_backward(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = node.value.data();
        let val = |v: Var| self.nodes[v.0].value.data();
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.wants(*b) {
                    out.push((*b, self.reduce_to(*b, g.iter().copied())));
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    out.push((*a, g.to_vec()));
                }
                if self.wants(*b) {
                    out.push((*b, self.reduce_to(*b, g.iter().map(|t| -t))));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = bv.len();
                if self.wants(*a) {
                    out.push((*a, g.iter().enumerate().map(|(k, t)| t * bv[k % n]).collect()));
                }
                if self.wants(*b) {
                    out.push((*b, self.reduce_to(*b, g.iter().zip(av).map(|(t, x)| t * x))));
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let n = bv.len();
                if self.wants(*a) {
                    out.push((*a, g.iter().enumerate().map(|(k, t)| t / bv[k % n]).collect()));
                }
                if self.wants(*b) {
                    let it = g
                        .iter()
                        .zip(av)
                        .enumerate()
                        .map(|(k, (t, x))| -t * x / (bv[k % n] * bv[k % n]));
                    out.push((*b, self.reduce_to(*b, it)));
                }
            }
            Op::Scale(x, c) => out.push((*x, g.iter().map(|t| t * c).collect())),
            Op::AddScalar(x) => out.push((*x, g.to_vec())),
            Op::MatMul { a, b, trans_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = (sa[0], sa[1]);
                let n = if *trans_b { sb[0] } else { sb[1] };
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    let mut ga = vec![0.0; m * k];
                    if *trans_b {
                        gemm_nn(g, bv, &mut ga, m, n, k);
                    } else {
                        gemm_nt(g, bv, &mut ga, m, n, k);
                    }
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; k * n];
                    if *trans_b {
                        gemm_tn(g, av, &mut gb, n, m, k);
                    } else {
                        gemm_tn(av, g, &mut gb, k, m, n);
                    }
                    out.push((*b, gb));
                }
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (t, m, k) = (sa[0], sa[1], sa[2]);
                let n = if *trans_b { sb[1] } else { sb[2] };
                let (av, bv) = (val(*a), val(*b));
                if self.wants(*a) {
                    let mut ga = vec![0.0; t * m * k];
                    for s in 0..t {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let bs = &bv[s * k * n..(s + 1) * k * n];
                        let dst = &mut ga[s * m * k..(s + 1) * m * k];
                        if *trans_b {
                            gemm_nn(gs, bs, dst, m, n, k);
                        } else {
                            gemm_nt(gs, bs, dst, m, n, k);
                        }
                    }
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    let mut gb = vec![0.0; t * k * n];
                    for s in 0..t {
                        let gs = &g[s * m * n..(s + 1) * m * n];
                        let as_ = &av[s * m * k..(s + 1) * m * k];
                        let dst = &mut gb[s * k * n..(s + 1) * k * n];
                        if *trans_b {
                            gemm_tn(gs, as_, dst, n, m, k);
                        } else {
                            gemm_tn(as_, gs, dst, k, m, n);
                        }
                    }
                    out.push((*b, gb));
                }
            }
            Op::Sigmoid(x) => out.push((*x, g.iter().zip(y).map(|(t, s)| t * s * (1.0 - s)).collect())),
            Op::Relu(x) => out.push((
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(t, &v)| if v > 0.0 { *t } else { 0.0 })
                    .collect(),
            )),
            Op::Tanh(x) => out.push((*x, g.iter().zip(y).map(|(t, s)| t * (1.0 - s * s)).collect())),
            Op::Exp(x) => out.push((*x, g.iter().zip(y).map(|(t, s)| t * s).collect())),
            Op::Log(x) => out.push((*x, g.iter().zip(val(*x)).map(|(t, v)| t / v).collect())),
            Op::Sqrt(x) => out.push((*x, g.iter().zip(y).map(|(t, s)| t / (2.0 * s)).collect())),
            Op::Square(x) => out.push((*x, g.iter().zip(val(*x)).map(|(t, v)| 2.0 * t * v).collect())),
            Op::Clamp { x, lo, hi } => out.push((
                *x,
                g.iter()
                    .zip(val(*x))
                    .map(|(t, v)| if *v >= *lo && *v <= *hi { *t } else { 0.0 })
                    .collect(),
            )),
            Op::Softmax { x, axis } => {
                let (outer, len, inner) = split_axis(node.value.shape(), *axis);
                let mut gx = vec![0.0; y.len()];
                for o in 0..outer {
                    for c in 0..inner {
                        let base = o * len * inner + c;
                        let dot: f64 = (0..len).map(|j| g[base + j * inner] * y[base + j * inner]).sum();
                        for j in 0..len {
                            let k = base + j * inner;
                            gx[k] = y[k] * (g[k] - dot);
                        }
                    }
                }
                out.push((*x, gx));
            }
            Op::LayerNorm { x, inv_std } => {
                let d = *node.value.shape().last().unwrap_or(&1);
                let mut gx = vec![0.0; y.len()];
                for (r, inv) in inv_std.iter().enumerate() {
                    let gr = &g[r * d..(r + 1) * d];
                    let yr = &y[r * d..(r + 1) * d];
                    let mg = gr.iter().sum::<f64>() / d as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                    for ((o, a), b) in gx[r * d..(r + 1) * d].iter_mut().zip(gr).zip(yr) {
                        *o = inv * (a - mg - b * mgy);
                    }
                }
                out.push((*x, gx));
            }
            Op::Sum(x) => out.push((*x, vec![g[0]; self.value(*x).len()])),
            Op::Mean(x) => {
                let n = self.value(*x).len();
                out.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let f = if matches!(node.op, Op::MeanAxis { .. }) {
                    1.0 / len as f64
                } else {
                    1.0
                };
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for j in 0..len {
                        let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d = s * f);
                    }
                }
                out.push((*x, gx));
            }
            Op::Norm(x) => {
                let n = y[0];
                let gx = if n > 0.0 {
                    val(*x).iter().map(|v| g[0] * v / n).collect()
                } else {
                    vec![0.0; self.value(*x).len()]
                };
                out.push((*x, gx));
            }
            Op::Entropy(p) => out.push((
                *p,
                val(*p)
                    .iter()
                    .map(|&v| if v > 0.0 { -g[0] * (v.ln() + 1.0) } else { 0.0 })
                    .collect(),
            )),
            Op::RowCosine { a, b, degenerate } => {
                let d = *self.shape(*a).last().unwrap();
                let (av, bv) = (val(*a), val(*b));
                let mut ga = vec![0.0; av.len()];
                let mut gb = vec![0.0; bv.len()];
                for (r, &deg) in degenerate.iter().enumerate() {
                    if deg {
                        continue;
                    }
                    let x = &av[r * d..(r + 1) * d];
                    let z = &bv[r * d..(r + 1) * d];
                    let nx = x.iter().map(|t| t * t).sum::<f64>().sqrt();
                    let nz = z.iter().map(|t| t * t).sum::<f64>().sqrt();
                    let c = y[r];
                    for j in 0..d {
                        ga[r * d + j] = g[r] * (z[j] / (nx * nz) - c * x[j] / (nx * nx));
                        gb[r * d + j] = g[r] * (x[j] / (nx * nz) - c * z[j] / (nz * nz));
                    }
                }
                if self.wants(*a) {
                    out.push((*a, ga));
                }
                if self.wants(*b) {
                    out.push((*b, gb));
                }
            }
            Op::Reshape(x) => out.push((*x, g.to_vec())),
            Op::Permute { x, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (i, &a) in axes.iter().enumerate() {
                    inverse[a] = i;
                }
                let (gx, _) = permute_data(g, node.value.shape(), &inverse);
                out.push((*x, gx));
            }
            Op::Gather { x, axis, indices } => {
                let (outer, len, inner) = split_axis(self.shape(*x), *axis);
                let mut gx = vec![0.0; outer * len * inner];
                let k = indices.len();
                for o in 0..outer {
                    for (jj, &j) in indices.iter().enumerate() {
                        let src = &g[(o * k + jj) * inner..(o * k + jj + 1) * inner];
                        let dst = &mut gx[(o * len + j) * inner..(o * len + j + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                out.push((*x, gx));
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = split_axis(node.value.shape(), *axis);
                let mut offset = 0;
                for v in inputs {
                    let len = self.shape(*v)[*axis];
                    if self.wants(*v) {
                        let mut gx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            let start = (o * total + offset) * inner;
                            gx.extend_from_slice(&g[start..start + len * inner]);
                        }
                        out.push((*v, gx));
                    }
                    offset += len;
                }
            }
            Op::Expand { x, axis, n } => {
                let xs = self.shape(*x);
                let outer: usize = xs[..*axis].iter().product();
                let inner: usize = xs[*axis..].iter().product();
                let mut gx = vec![0.0; outer * inner];
                for o in 0..outer {
                    let dst = &mut gx[o * inner..(o + 1) * inner];
                    for r in 0..*n {
                        let src = &g[(o * n + r) * inner..(o * n + r + 1) * inner];
                        dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
                    }
                }
                out.push((*x, gx));
            }
            Op::StraightThrough { soft } => out.push((*soft, g.to_vec())),
        }
        out
    }
}
