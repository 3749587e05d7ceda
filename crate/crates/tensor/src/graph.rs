//! Define-by-run tape.
//!
//! Every operation appends a node holding its forward value; node ids are
//! therefore a topological order and [`Graph::backward`] walks them in
//! reverse. Leaf gradients accumulate across `backward` calls until
//! [`Graph::zero_grad`].

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    MatMul(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Gelu(Var),
    Log(Var),
    Clamp(Var, T, T),
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    MeanAxis { x: Var, axis: usize },
    Reshape(Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Narrow { x: Var, axis: usize, start: usize },
    Gather { x: Var, index: Vec<usize> },
    MaxOf { inputs: Vec<Var>, which: Vec<u32> },
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    MaxPool2d { x: Var, argmax: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, train: bool },
    UpsampleNearest { x: Var, factor: usize },
    UpsampleBilinear { x: Var, factor: usize },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Batch-normalisation mode.
#[derive(Clone, Debug)]
pub enum NormMode<'a, T> {
    /// Normalise with batch statistics.
    Train { eps: T },
    /// Normalise with stored running statistics.
    Eval { mean: &'a [T], var: &'a [T], eps: T },
}

/// Per-channel statistics observed in a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n − 1) variance, the quantity tracked by running averages.
    pub var: Vec<T>,
}

#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
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

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(TensorError::dim(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("shapes checked")
    }

    // ---- elementwise -------------------------------------------------------

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("div", a, b)?;
        let v = self.zip_map(a, b, |x, y| x / y);
        Ok(self.push(v, Op::Div(a, b), &[a, b]))
    }

    /// Adds `b` (shape `[n]`) to every length-`n` row along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let n = *self.shape(x).last().unwrap_or(&1);
        if self.shape(b) != [n] {
            return Err(TensorError::dim(
                "add_bias",
                format!("bias {:?} for input {:?}", self.shape(b), self.shape(x)),
            ));
        }
        let bias = self.value(b).data().to_vec();
        let mut v = self.value(x).clone();
        for row in v.data_mut().chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&bias) {
                *o = *o + bv;
            }
        }
        Ok(self.push(v, Op::AddBias(x, b), &[x, b]))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: T) -> Var {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::AddScalar(x), &[x])
    }

    /// `c - x`
    pub fn rsub_scalar(&mut self, c: T, x: Var) -> Var {
        let neg = self.scale(x, -T::one());
        self.add_scalar(neg, c)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        self.push(v, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let v = self.value(x).map(sigmoid);
        self.push(v, Op::Sigmoid(x), &[x])
    }

    /// Exact GeLU, `0.5·x·(1 + erf(x/√2))`.
    pub fn gelu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(gelu);
        self.push(v, Op::Gelu(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.ln());
        self.push(v, Op::Log(x), &[x])
    }

    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Var {
        let v = self.value(x).map(|a| a.max(lo).min(hi));
        self.push(v, Op::Clamp(x, lo, hi), &[x])
    }

    /// Elementwise maximum over a set of same-shape tensors. Ties go to the
    /// earliest operand.
    pub fn max_of(&mut self, inputs: &[Var]) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TensorError::arg("max_of", "empty operand set"))?;
        for &v in &inputs[1..] {
            self.same_shape("max_of", first, v)?;
        }
        let mut out = self.value(first).clone();
        let mut which = vec![0u32; out.len()];
        for (k, &v) in inputs.iter().enumerate().skip(1) {
            let src = self.value(v).data();
            for ((o, w), &s) in out.data_mut().iter_mut().zip(which.iter_mut()).zip(src) {
                if s > *o {
                    *o = s;
                    *w = k as u32;
                }
            }
        }
        Ok(self.push(
            out,
            Op::MaxOf {
                inputs: inputs.to_vec(),
                which,
            },
            inputs,
        ))
    }

    // ---- linear algebra ----------------------------------------------------

    /// `[m×k] · [k×n] -> [m×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(TensorError::dim("matmul", format!("{sa:?} · {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_acc(m, k, n, self.value(a).data(), self.value(b).data(), &mut out);
        let v = Tensor::new([m, n], out).expect("matmul shape");
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    /// `x·w + b` for `x: [m×k]`, `w: [k×n]`, `b: [n]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }

    // ---- reductions --------------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        self.push(v, Op::Mean(x), &[x])
    }

    fn reduce_axis(&self, op: &'static str, x: Var, axis: usize) -> Result<(Tensor<T>, usize)> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(TensorError::arg(op, format!("axis {axis} for shape {shape:?}")));
        }
        let (outer, len, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for l in 0..len {
                let base = (o * len + l) * inner;
                for i in 0..inner {
                    out[o * inner + i] = out[o * inner + i] + src[base + i];
                }
            }
        }
        let mut out_shape = shape;
        out_shape.remove(axis);
        Ok((Tensor::new(out_shape, out).expect("reduced shape"), len))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (v, _) = self.reduce_axis("sum_axis", x, axis)?;
        Ok(self.push(v, Op::SumAxis { x, axis }, &[x]))
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let (mut v, len) = self.reduce_axis("mean_axis", x, axis)?;
        v.scale_assign(T::one() / T::of(len as f64));
        Ok(self.push(v, Op::MeanAxis { x, axis }, &[x]))
    }

    // ---- shape -------------------------------------------------------------

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape.to_vec())?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    /// Collapse everything after the leading axis.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        let lead = *s.first().unwrap_or(&1);
        let rest = numel(&s[1.min(s.len())..]);
        self.reshape(x, &[lead, rest])
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.len() < 2 {
            return Err(TensorError::dim("transpose", format!("rank {}", shape.len())));
        }
        let r = shape.len();
        let (rows, cols) = (shape[r - 2], shape[r - 1]);
        let src = self.value(x).data();
        let mut out = vec![T::zero(); src.len()];
        transpose_blocks(src, &mut out, rows, cols);
        let mut out_shape = shape;
        out_shape.swap(r - 2, r - 1);
        let v = Tensor::new(out_shape, out).expect("transpose shape");
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| TensorError::arg("concat", "no operands"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(TensorError::arg("concat", format!("axis {axis} for {base:?}")));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let compatible = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(TensorError::dim("concat", format!("{s:?} vs {base:?} on axis {axis}")));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let src = self.value(v).data();
                out.extend_from_slice(&src[o * len * inner..(o + 1) * len * inner]);
            }
        }
        let mut out_shape = base;
        out_shape[axis] = total;
        let v = Tensor::new(out_shape, out).expect("concat shape");
        Ok(self.push(
            v,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            inputs,
        ))
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(TensorError::arg(
                "narrow",
                format!("[{start}, {}) on axis {axis} of {shape:?}", start + len),
            ));
        }
        let (outer, full, inner) = axis_split(&shape, axis);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * full + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let v = Tensor::new(out_shape, out).expect("narrow shape");
        Ok(self.push(v, Op::Narrow { x, axis, start }, &[x]))
    }

    /// `out.flat[i] = x.flat[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, x: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if let Some(bad) = index.iter().find(|&&i| i >= n) {
            return Err(TensorError::arg("gather", format!("index {bad} out of {n}")));
        }
        if numel(shape) != index.len() {
            return Err(TensorError::dim(
                "gather",
                format!("{} indices for shape {shape:?}", index.len()),
            ));
        }
        let src = self.value(x).data();
        let data = index.iter().map(|&i| src[i]).collect();
        let v = Tensor::new(shape.to_vec(), data)?;
        Ok(self.push(v, Op::Gather { x, index }, &[x]))
    }

    /// Rows of a 2-D tensor, in the order given (repeats allowed).
    pub fn gather_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TensorError::dim("gather_rows", format!("rank {}", s.len())));
        }
        if let Some(bad) = rows.iter().find(|&&r| r >= s[0]) {
            return Err(TensorError::arg("gather_rows", format!("row {bad} of {}", s[0])));
        }
        let d = s[1];
        let index = rows
            .iter()
            .flat_map(|&r| (r * d)..(r * d + d))
            .collect();
        self.gather(x, index, &[rows.len(), d])
    }

    // ---- spatial -----------------------------------------------------------

    /// Cross-correlation of `x: [B,C,H,W]` with `w: [O,C,k,k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] {
            return Err(TensorError::dim("conv2d", format!("input {xs:?}, kernel {ws:?}")));
        }
        if let Some(b) = b {
            if self.shape(b) != [ws[0]] {
                return Err(TensorError::dim("conv2d", format!("bias {:?}", self.shape(b))));
            }
        }
        let g = ConvGeom::new(xs[1], xs[2], xs[3], ws[2], stride, pad).ok_or_else(|| {
            TensorError::dim(
                "conv2d",
                format!("non-positive output extent for input {xs:?}, k={}, s={stride}, p={pad}", ws[2]),
            )
        })?;
        let (batch, c_out) = (xs[0], ws[0]);
        let (rows, ncols) = (g.col_rows(), g.col_cols());
        let img_len = xs[1] * xs[2] * xs[3];
        let mut cols = vec![T::zero(); rows * ncols];
        let mut out = vec![T::zero(); batch * c_out * ncols];
        let xv = self.value(x).data();
        let wv = self.value(w).data();
        for n in 0..batch {
            kernels::im2col(&g, &xv[n * img_len..(n + 1) * img_len], &mut cols);
            let dst = &mut out[n * c_out * ncols..(n + 1) * c_out * ncols];
            kernels::gemm_acc(c_out, rows, ncols, wv, &cols, dst);
            if let Some(b) = b {
                let bv = self.value(b).data();
                for (o, chunk) in dst.chunks_mut(ncols).enumerate() {
                    for v in chunk {
                        *v = *v + bv[o];
                    }
                }
            }
        }
        let v = Tensor::new([batch, c_out, g.h_out, g.w_out], out).expect("conv shape");
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(v, Op::Conv2d { x, w, b, stride, pad }, &inputs))
    }

    /// Max pooling over `k×k` windows with stride `k` (no padding).
    pub fn max_pool2d(&mut self, x: Var, k: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || k == 0 || s[2] < k || s[3] < k {
            return Err(TensorError::dim("max_pool2d", format!("input {s:?}, kernel {k}")));
        }
        let (planes, h, w) = (s[0] * s[1], s[2], s[3]);
        let (ho, wo) = ((h - k) / k + 1, (w - k) / k + 1);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * ho * wo);
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        for p in 0..planes {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = p * h * w + (oy * k) * w + ox * k;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = p * h * w + (oy * k + ky) * w + ox * k + kx;
                            if src[idx] > src[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(src[best]);
                    argmax.push(best);
                }
            }
        }
        let v = Tensor::new([s[0], s[1], ho, wo], out).expect("pool shape");
        Ok(self.push(v, Op::MaxPool2d { x, argmax }, &[x]))
    }

    /// Per-channel batch normalisation of `x: [B,C,...]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: NormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 || self.shape(gamma) != [s[1]] || self.shape(beta) != [s[1]] {
            return Err(TensorError::dim(
                "batch_norm",
                format!("input {s:?}, gamma {:?}, beta {:?}", self.shape(gamma), self.shape(beta)),
            ));
        }
        let (batch, c, spatial) = (s[0], s[1], numel(&s[2..]));
        let count = batch * spatial;
        let src = self.value(x).data();
        let (mean, inv_std, stats, train) = match mode {
            NormMode::Train { eps } => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut acc = T::zero();
                    for n in 0..batch {
                        let base = (n * c + ch) * spatial;
                        for &v in &src[base..base + spatial] {
                            acc = acc + v;
                        }
                    }
                    let m = acc / T::of(count as f64);
                    let mut sq = T::zero();
                    for n in 0..batch {
                        let base = (n * c + ch) * spatial;
                        for &v in &src[base..base + spatial] {
                            sq = sq + (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq;
                }
                let biased: Vec<T> = var.iter().map(|&v| v / T::of(count as f64)).collect();
                let unbiased = var
                    .iter()
                    .map(|&v| v / T::of(count.saturating_sub(1).max(1) as f64))
                    .collect();
                let inv_std: Vec<T> = biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, inv_std, Some(stats), true)
            }
            NormMode::Eval { mean, var, eps } => {
                if mean.len() != c || var.len() != c {
                    return Err(TensorError::dim("batch_norm", "running statistics length"));
                }
                let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
                (mean.to_vec(), inv_std, None, false)
            }
        };
        let gv = self.value(gamma).data();
        let bv = self.value(beta).data();
        let mut xhat = vec![T::zero(); src.len()];
        let mut out = vec![T::zero(); src.len()];
        for n in 0..batch {
            for ch in 0..c {
                let base = (n * c + ch) * spatial;
                for i in base..base + spatial {
                    let h = (src[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = h;
                    out[i] = gv[ch] * h + bv[ch];
                }
            }
        }
        let v = Tensor::new(s, out).expect("bn shape");
        let var = self.push(
            v,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            },
            &[x, gamma, beta],
        );
        Ok((var, stats))
    }

    fn check_upsample(&self, op: &'static str, x: Var, factor: usize) -> Result<Vec<usize>> {
        if factor < 1 {
            return Err(TensorError::arg(op, "factor must be at least 1"));
        }
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TensorError::dim(op, format!("rank {}", s.len())));
        }
        Ok(s)
    }

    /// Nearest-neighbour upsampling of the last two axes by an integer factor.
    pub fn upsample_nearest(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.check_upsample("upsample_nearest", x, factor)?;
        let r = s.len();
        let (h, w) = (s[r - 2], s[r - 1]);
        let planes = numel(&s[..r - 2]);
        let (fh, fw) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * fh * fw);
        for p in 0..planes {
            for y in 0..fh {
                let row = &src[p * h * w + (y / factor) * w..p * h * w + (y / factor + 1) * w];
                for xo in 0..fw {
                    out.push(row[xo / factor]);
                }
            }
        }
        let mut out_shape = s;
        out_shape[r - 2] = fh;
        out_shape[r - 1] = fw;
        let v = Tensor::new(out_shape, out).expect("upsample shape");
        Ok(self.push(v, Op::UpsampleNearest { x, factor }, &[x]))
    }

    /// Bilinear upsampling of the last two axes (half-pixel centres, edge clamped).
    pub fn upsample_bilinear(&mut self, x: Var, factor: usize) -> Result<Var> {
        let s = self.check_upsample("upsample_bilinear", x, factor)?;
        let r = s.len();
        let (h, w) = (s[r - 2], s[r - 1]);
        let planes = numel(&s[..r - 2]);
        let (fh, fw) = (h * factor, w * factor);
        let src = self.value(x).data();
        let mut out = Vec::with_capacity(planes * fh * fw);
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..fh {
                let (y0, y1, fy) = kernels::bilinear_taps(y, factor, h);
                let fy = T::of(fy);
                for xo in 0..fw {
                    let (x0, x1, fx) = kernels::bilinear_taps(xo, factor, w);
                    let fx = T::of(fx);
                    let top = plane[y0 * w + x0] * (T::one() - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (T::one() - fx) + plane[y1 * w + x1] * fx;
                    out.push(top * (T::one() - fy) + bot * fy);
                }
            }
        }
        let mut out_shape = s;
        out_shape[r - 2] = fh;
        out_shape[r - 1] = fw;
        let v = Tensor::new(out_shape, out).expect("upsample shape");
        Ok(self.push(v, Op::UpsampleBilinear { x, factor }, &[x]))
    }

    // ---- reverse pass ------------------------------------------------------
    /// Hash of every piecewise choice recorded on the tape: ReLU and clamp
    /// activity masks plus the winners of max and max-pool. Two passes with
    /// equal fingerprints lie on the same smooth piece of the function.
    pub fn branch_fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu(x) => {
                    i.hash(&mut h);
                    for &a in self.value(*x).data() {
                        (a > T::zero()).hash(&mut h);
                    }
                }
                Op::Clamp(x, lo, hi) => {
                    i.hash(&mut h);
                    for &a in self.value(*x).data() {
                        (a < *lo, a > *hi).hash(&mut h);
                    }
                }
                Op::MaxOf { which, .. } => {
                    i.hash(&mut h);
                    which.hash(&mut h);
                }
                Op::MaxPool2d { argmax, .. } => {
                    i.hash(&mut h);
                    argmax.hash(&mut h);
                }
                _ => {}
            }
        }
        h.finish()
    }


    /// Accumulate `d(root)/d(leaf)` into every gradient-tracking leaf.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(TensorError::arg(
                "backward",
                format!("root must be scalar, got shape {:?}", self.shape(root)),
            ));
        }
        let mut adj: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        adj[root.0] = Some(Tensor::ones(self.shape(root).to_vec()));
        for id in (0..=root.0).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g),
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (input, grad) in self.input_grads(id, &g) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut adj[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(())
    }

    fn input_grads(&self, id: usize, g: &Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let node = &self.nodes[id];
        let gd = g.data();
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data).expect("grad shape");
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.map(|v| -v))],
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(&g, &y)| g * y).collect();
                let gb = gd.iter().zip(va).map(|(&g, &x)| g * x).collect();
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Div(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(&g, &y)| g / y).collect();
                let gb = gd
                    .iter()
                    .zip(va.iter().zip(vb))
                    .map(|(&g, (&x, &y))| -g * x / (y * y))
                    .collect();
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::AddBias(x, b) => {
                let n = self.shape(*b)[0];
                let mut gb = vec![T::zero(); n];
                for row in gd.chunks(n) {
                    for (acc, &v) in gb.iter_mut().zip(row) {
                        *acc = *acc + v;
                    }
                }
                vec![(*x, g.clone()), (*b, like(*b, gb))]
            }
            Op::Scale(x, c) => vec![(*x, g.map(|v| v * *c))],
            Op::AddScalar(x) => vec![(*x, g.clone())],
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                let mut ga = vec![T::zero(); m * k];
                kernels::gemm_a_bt_acc(m, n, k, gd, self.value(*b).data(), &mut ga);
                let mut gb = vec![T::zero(); k * n];
                kernels::gemm_at_b_acc(m, k, n, self.value(*a).data(), gd, &mut gb);
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                let gx = gd
                    .iter()
                    .zip(yv)
                    .map(|(&g, &y)| g * y * (T::one() - y))
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Gelu(x) => {
                let xv = self.value(*x).data();
                let gx = gd.iter().zip(xv).map(|(&g, &v)| g * gelu_grad(v)).collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let gx = gd.iter().zip(xv).map(|(&g, &v)| g / v).collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                let gx = gd
                    .iter()
                    .zip(xv)
                    .map(|(&g, &v)| if v >= *lo && v <= *hi { g } else { T::zero() })
                    .collect();
                vec![(*x, like(*x, gx))]
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                vec![(*x, like(*x, vec![gd[0]; n]))]
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                vec![(*x, like(*x, vec![gd[0] / T::of(n as f64); n]))]
            }
            Op::SumAxis { x, axis } | Op::MeanAxis { x, axis } => {
                let (outer, len, inner) = axis_split(self.shape(*x), *axis);
                let scale = match node.op {
                    Op::MeanAxis { .. } => T::one() / T::of(len as f64),
                    _ => T::one(),
                };
                let mut gx = vec![T::zero(); outer * len * inner];
                for o in 0..outer {
                    for l in 0..len {
                        for i in 0..inner {
                            gx[(o * len + l) * inner + i] = gd[o * inner + i] * scale;
                        }
                    }
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Reshape(x) => vec![(*x, like(*x, gd.to_vec()))],
            Op::Transpose(x) => {
                let s = self.shape(*x);
                let r = s.len();
                let mut gx = vec![T::zero(); gd.len()];
                // g has the swapped layout (cols × rows per block)
                transpose_blocks(gd, &mut gx, s[r - 1], s[r - 2]);
                vec![(*x, like(*x, gx))]
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(node.value.shape(), *axis);
                let mut offset = 0;
                let mut out = Vec::with_capacity(inputs.len());
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    let mut gx = Vec::with_capacity(outer * len * inner);
                    for o in 0..outer {
                        let from = (o * total + offset) * inner;
                        gx.extend_from_slice(&gd[from..from + len * inner]);
                    }
                    offset += len;
                    out.push((v, like(v, gx)));
                }
                out
            }
            Op::Narrow { x, axis, start } => {
                let (outer, full, inner) = axis_split(self.shape(*x), *axis);
                let len = node.value.shape()[*axis];
                let mut gx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    let to = (o * full + start) * inner;
                    gx[to..to + len * inner].copy_from_slice(&gd[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, like(*x, gx))]
            }
            Op::Gather { x, index } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&i, &g) in index.iter().zip(gd) {
                    gx[i] = gx[i] + g;
                }
                vec![(*x, like(*x, gx))]
            }
            Op::MaxOf { inputs, which } => inputs
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let gx = gd
                        .iter()
                        .zip(which)
                        .map(|(&g, &w)| if w as usize == k { g } else { T::zero() })
                        .collect();
                    (v, like(v, gx))
                })
                .collect(),
            Op::Conv2d { x, w, b, stride, pad } => {
                let xs = self.shape(*x);
                let ws = self.shape(*w);
                let geom = ConvGeom::new(xs[1], xs[2], xs[3], ws[2], *stride, *pad).expect("geometry checked in forward");
                let (batch, c_out) = (xs[0], ws[0]);
                let (rows, ncols) = (geom.col_rows(), geom.col_cols());
                let img_len = xs[1] * xs[2] * xs[3];
                let xv = self.value(*x).data();
                let wv = self.value(*w).data();
                let mut gx = vec![T::zero(); xv.len()];
                let mut gw = vec![T::zero(); wv.len()];
                let mut cols = vec![T::zero(); rows * ncols];
                let mut gcols = vec![T::zero(); rows * ncols];
                for n in 0..batch {
                    let go = &gd[n * c_out * ncols..(n + 1) * c_out * ncols];
                    kernels::im2col(&geom, &xv[n * img_len..(n + 1) * img_len], &mut cols);
                    kernels::gemm_a_bt_acc(c_out, ncols, rows, go, &cols, &mut gw);
                    gcols.iter_mut().for_each(|v| *v = T::zero());
                    kernels::gemm_at_b_acc(c_out, rows, ncols, wv, go, &mut gcols);
                    kernels::col2im_acc(&geom, &gcols, &mut gx[n * img_len..(n + 1) * img_len]);
                }
                let mut out = vec![(*x, like(*x, gx)), (*w, like(*w, gw))];
                if let Some(b) = b {
                    let mut gb = vec![T::zero(); c_out];
                    for (i, chunk) in gd.chunks(ncols).enumerate() {
                        gb[i % c_out] = gb[i % c_out] + chunk.iter().fold(T::zero(), |a, &v| a + v);
                    }
                    out.push((*b, like(*b, gb)));
                }
                out
            }
            Op::MaxPool2d { x, argmax } => {
                let mut gx = vec![T::zero(); self.value(*x).len()];
                for (&i, &g) in argmax.iter().zip(gd) {
                    gx[i] = gx[i] + g;
                }
                vec![(*x, like(*x, gx))]
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let s = self.shape(*x);
                let (batch, c, spatial) = (s[0], s[1], numel(&s[2..]));
                let count = T::of((batch * spatial) as f64);
                let gv = self.value(*gamma).data();
                let mut ggamma = vec![T::zero(); c];
                let mut gbeta = vec![T::zero(); c];
                for n in 0..batch {
                    for ch in 0..c {
                        let base = (n * c + ch) * spatial;
                        for i in base..base + spatial {
                            ggamma[ch] = ggamma[ch] + gd[i] * xhat[i];
                            gbeta[ch] = gbeta[ch] + gd[i];
                        }
                    }
                }
                let mut gx = vec![T::zero(); gd.len()];
                for n in 0..batch {
                    for ch in 0..c {
                        let base = (n * c + ch) * spatial;
                        for i in base..base + spatial {
                            gx[i] = if *train {
                                // dxhat = g·γ; Σdxhat = γ·Σg, Σ(dxhat·xhat) = γ·Σ(g·xhat)
                                gv[ch] * inv_std[ch] / count
                                    * (count * gd[i] - gbeta[ch] - xhat[i] * ggamma[ch])
                            } else {
                                gd[i] * gv[ch] * inv_std[ch]
                            };
                        }
                    }
                }
                vec![
                    (*x, like(*x, gx)),
                    (*gamma, like(*gamma, ggamma)),
                    (*beta, like(*beta, gbeta)),
                ]
            }
            Op::UpsampleNearest { x, factor } => {
                let s = self.shape(*x);
                let r = s.len();
                let (h, w) = (s[r - 2], s[r - 1]);
                let planes = numel(&s[..r - 2]);
                let (fh, fw) = (h * factor, w * factor);
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    for y in 0..fh {
                        for xo in 0..fw {
                            let dst = p * h * w + (y / factor) * w + xo / factor;
                            gx[dst] = gx[dst] + gd[(p * fh + y) * fw + xo];
                        }
                    }
                }
                vec![(*x, like(*x, gx))]
            }
            Op::UpsampleBilinear { x, factor } => {
                let s = self.shape(*x);
                let r = s.len();
                let (h, w) = (s[r - 2], s[r - 1]);
                let planes = numel(&s[..r - 2]);
                let (fh, fw) = (h * factor, w * factor);
                let mut gx = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let base = p * h * w;
                    for y in 0..fh {
                        let (y0, y1, fy) = kernels::bilinear_taps(y, *factor, h);
                        let fy = T::of(fy);
                        for xo in 0..fw {
                            let (x0, x1, fx) = kernels::bilinear_taps(xo, *factor, w);
                            let fx = T::of(fx);
                            let gv = gd[(p * fh + y) * fw + xo];
                            let one = T::one();
                            for (idx, wt) in [
                                (y0 * w + x0, (one - fy) * (one - fx)),
                                (y0 * w + x1, (one - fy) * fx),
                                (y1 * w + x0, fy * (one - fx)),
                                (y1 * w + x1, fy * fx),
                            ] {
                                gx[base + idx] = gx[base + idx] + gv * wt;
                            }
                        }
                    }
                }
                vec![(*x, like(*x, gx))]
            }
        }
    }
}

fn transpose_blocks<T: Copy>(src: &[T], dst: &mut [T], rows: usize, cols: usize) {
    let block = rows * cols;
    for (s, d) in src.chunks(block).zip(dst.chunks_mut(block)) {
        for r in 0..rows {
            for c in 0..cols {
                d[c * rows + r] = s[r * cols + c];
            }
        }
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn gelu<T: Scalar>(x: T) -> T {
    T::of(0.5) * x * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf())
}

fn gelu_grad<T: Scalar>(x: T) -> T {
    let cdf = T::of(0.5) * (T::one() + (x / T::of(std::f64::consts::SQRT_2)).erf());
    let pdf = (-(x * x) * T::of(0.5)).exp() / T::of((2.0 * std::f64::consts::PI).sqrt());
    cdf + x * pdf
}
