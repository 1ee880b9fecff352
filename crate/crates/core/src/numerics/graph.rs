//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape; `backward` walks the tape in
//! reverse and accumulates vector-Jacobian products. Node values are never
//! mutated after creation, so one graph can be differentiated any number of
//! times with identical results.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};

use super::{Float, ParameterSet, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

/// Spatial padding mode of a convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding of `kernel / 2` on every side.
    Same,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_h: usize,
    pad_w: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

enum Op<T: Float> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        trans_a: bool,
        trans_b: bool,
        m: usize,
        k: usize,
        n: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Exp(Var),
    Square(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Transpose(Var),
    ConcatCols(Vec<Var>),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
        cols: Vec<T>,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
}

struct Node<T: Float> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A recording of tensor operations.
pub struct Graph<T: Float> {
    nodes: Vec<Node<T>>,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by one backward pass.
pub struct Gradients<T: Float> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Float> Gradients<T> {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

/// Parameter names bound to graph leaves.
pub type Bindings = BTreeMap<String, Var>;

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Adds an input that never receives gradients.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Adds a leaf that receives gradients.
    pub fn param(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn leaf(&mut self, t: Tensor<T>, requires_grad: bool) -> Var {
        self.push(t, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Binds every tensor of `params` as a leaf.
    pub fn bind(&mut self, params: &ParameterSet<T>, trainable: bool) -> Bindings {
        params
            .iter()
            .map(|(name, t)| {
                let mut t = t.clone();
                t.zero_grad();
                (name.clone(), self.leaf(t, trainable))
            })
            .collect()
    }

    fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// 2-D matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// 2-D matrix product of optionally transposed operands.
    pub fn matmul_t(&mut self, a: Var, b: Var, trans_a: bool, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 {
            return Err(shape_err("matmul", format!("expected 2-D operands, got {sa:?} and {sb:?}")));
        }
        let (m, ka) = if trans_a { (sa[1], sa[0]) } else { (sa[0], sa[1]) };
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if ka != kb {
            return Err(shape_err(
                "matmul",
                format!("inner dimensions differ: {sa:?}{} x {sb:?}{}", t_mark(trans_a), t_mark(trans_b)),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(m, ka, n, T::one(), self.data(a), trans_a, self.data(b), trans_b, T::zero(), &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Tensor::new(vec![m, n], out)?,
            Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                m,
                k: ka,
                n,
            },
            rg,
        ))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_map(&mut self, a: Var, b: Var, op: Op<T>, f: impl Fn(T, T) -> T) -> Var {
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    fn map(&mut self, a: Var, op: Op<T>, f: impl Fn(T) -> T) -> Var {
        let data = self.data(a).iter().map(|&x| f(x)).collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        self.push(Tensor::new(shape, data).expect("same shape"), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_map(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_map(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_map(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Adds a vector to every row (last axis) of `x`.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.shape(x), self.shape(bias));
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(shape_err("add_row", format!("{sx:?} + row {sb:?}")));
        }
        let n = sb[0];
        let b = self.data(bias).to_vec();
        let data = self
            .data(x)
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[i % n])
            .collect();
        let shape = sx.to_vec();
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(shape, data)?, Op::AddRow(x, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        self.map(a, Op::Scale(a, c), |x| x * c)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), |x| x.exp())
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let cols = *shape
            .last()
            .ok_or_else(|| shape_err("log_softmax", "scalar input"))?;
        if cols == 0 {
            return Err(shape_err("log_softmax", format!("empty last axis in {shape:?}")));
        }
        let mut out = self.data(a).to_vec();
        for row in out.chunks_mut(cols) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            row.iter_mut().for_each(|v| *v = *v - lse);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(shape, out)?, Op::LogSoftmax(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.data(a).iter().copied().sum::<T>();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.data(a).len().max(1);
        let s = self.data(a).iter().copied().sum::<T>() / T::of(n as f64);
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        let rg = self.rg(a);
        Ok(self.push(t, Op::Reshape(a), rg))
    }

    /// Collapses every axis after the first.
    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        let rows = s.first().copied().unwrap_or(1);
        let cols = s.iter().skip(1).product();
        self.reshape(a, &[rows, cols])
    }

    /// 2-D transpose.
    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("expected 2-D, got {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.data(a);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(a), rg))
    }

    /// Joins 2-D tensors with equal row counts side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs"));
        };
        let rows = self.shape(first).first().copied().unwrap_or(0);
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let s = self.shape(p);
            if s.len() != 2 || s[0] != rows {
                return Err(shape_err("concat_cols", format!("expected {rows}×_, got {s:?}")));
            }
            widths.push(s[1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.data(p)[r * w..(r + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::new(vec![rows, total], out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// 2-D convolution of an `N×C×H×W` input with an `O×C×KH×KW` kernel.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || stride == 0 {
            return Err(shape_err(
                "conv2d",
                format!("input {sx:?}, kernel {sw:?}, stride {stride}"),
            ));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err(
                    "conv2d",
                    format!("bias {:?} for {} output channels", self.shape(b), sw[0]),
                ));
            }
        }
        let (pad_h, pad_w) = match padding {
            Padding::Valid => (0, 0),
            Padding::Same => (sw[2] / 2, sw[3] / 2),
        };
        if sx[2] + 2 * pad_h < sw[2] || sx[3] + 2 * pad_w < sw[3] {
            return Err(shape_err(
                "conv2d",
                format!("kernel {sw:?} larger than padded input {sx:?}"),
            ));
        }
        let geom = ConvGeom {
            n: sx[0],
            c: sx[1],
            h: sx[2],
            w: sx[3],
            o: sw[0],
            kh: sw[2],
            kw: sw[3],
            stride,
            pad_h,
            pad_w,
            oh: (sx[2] + 2 * pad_h - sw[2]) / stride + 1,
            ow: (sx[3] + 2 * pad_w - sw[3]) / stride + 1,
        };
        let cols = im2col(self.data(x), &geom);
        let (k, np) = (geom.k(), geom.n * geom.p());
        let mut tmp = vec![T::zero(); geom.o * np];
        T::gemm(geom.o, k, np, T::one(), self.data(w), false, &cols, false, T::zero(), &mut tmp);
        let p = geom.p();
        let mut out = vec![T::zero(); geom.n * geom.o * p];
        let bias = b.map(|b| self.data(b).to_vec());
        for o in 0..geom.o {
            let bo = bias.as_ref().map_or(T::zero(), |b| b[o]);
            for n in 0..geom.n {
                let src = &tmp[o * np + n * p..o * np + (n + 1) * p];
                let dst = &mut out[(n * geom.o + o) * p..(n * geom.o + o + 1) * p];
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = s + bo;
                }
            }
        }
        let w_rg = self.rg(w);
        let rg = self.rg(x) || w_rg || b.is_some_and(|b| self.rg(b));
        let value = Tensor::new(vec![geom.n, geom.o, geom.oh, geom.ow], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                // The patches are only needed for the kernel gradient.
                cols: if w_rg { cols } else { Vec::new() },
            },
            rg,
        ))
    }

    /// Max pooling over `kernel×kernel` windows of an `N×C×H×W` input.
    pub fn max_pool2d(&mut self, x: Var, kernel: usize, stride: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 || kernel == 0 || stride == 0 || s[2] < kernel || s[3] < kernel {
            return Err(shape_err(
                "max_pool2d",
                format!("input {s:?}, kernel {kernel}, stride {stride}"),
            ));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let oh = (h - kernel) / stride + 1;
        let ow = (w - kernel) / stride + 1;
        let src = self.data(x);
        let mut out = Vec::with_capacity(n * c * oh * ow);
        let mut argmax = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..oh {
                for j in 0..ow {
                    let mut best = base + i * stride * w + j * stride;
                    for di in 0..kernel {
                        for dj in 0..kernel {
                            let idx = base + (i * stride + di) * w + j * stride + dj;
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
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::new(vec![n, c, oh, ow], out)?,
            Op::MaxPool { x, argmax },
            rg,
        ))
    }

    /// Gradients of the scalar `loss` with respect to every node that requires them.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul {
                a,
                b,
                trans_a,
                trans_b,
                m,
                k,
                n,
            } => {
                if self.rg(a) {
                    // dA (m×k) = G · op(B)^T, stored in A's layout.
                    let mut da = vec![T::zero(); m * k];
                    if trans_a {
                        // A is k×m: dA = op(B) · G^T
                        T::gemm(k, n, m, T::one(), self.data(b), trans_b, g, true, T::zero(), &mut da);
                    } else {
                        T::gemm(m, n, k, T::one(), g, false, self.data(b), !trans_b, T::zero(), &mut da);
                    }
                    accumulate(grads, a, da);
                }
                if self.rg(b) {
                    let mut db = vec![T::zero(); k * n];
                    if trans_b {
                        // B is n×k: dB = G^T · op(A)
                        T::gemm(n, m, k, T::one(), g, true, self.data(a), trans_a, T::zero(), &mut db);
                    } else {
                        T::gemm(k, m, n, T::one(), self.data(a), !trans_a, g, false, T::zero(), &mut db);
                    }
                    accumulate(grads, b, db);
                }
            }
            &Op::Add(a, b) => {
                if self.rg(a) {
                    accumulate(grads, a, g.to_vec());
                }
                if self.rg(b) {
                    accumulate(grads, b, g.to_vec());
                }
            }
            &Op::Sub(a, b) => {
                if self.rg(a) {
                    accumulate(grads, a, g.to_vec());
                }
                if self.rg(b) {
                    accumulate(grads, b, g.iter().map(|&v| -v).collect());
                }
            }
            &Op::Mul(a, b) => {
                if self.rg(a) {
                    let d = g.iter().zip(self.data(b)).map(|(&g, &y)| g * y).collect();
                    accumulate(grads, a, d);
                }
                if self.rg(b) {
                    let d = g.iter().zip(self.data(a)).map(|(&g, &x)| g * x).collect();
                    accumulate(grads, b, d);
                }
            }
            &Op::AddRow(x, bias) => {
                if self.rg(x) {
                    accumulate(grads, x, g.to_vec());
                }
                if self.rg(bias) {
                    let n = self.shape(bias)[0];
                    let mut db = vec![T::zero(); n];
                    for row in g.chunks(n) {
                        db.iter_mut().zip(row).for_each(|(d, &v)| *d = *d + v);
                    }
                    accumulate(grads, bias, db);
                }
            }
            &Op::Scale(a, c) => {
                if self.rg(a) {
                    accumulate(grads, a, g.iter().map(|&v| v * c).collect());
                }
            }
            &Op::Relu(a) => {
                let d = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect();
                accumulate(grads, a, d);
            }
            &Op::Exp(a) => {
                let d = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(&g, &y)| g * y)
                    .collect();
                accumulate(grads, a, d);
            }
            &Op::Square(a) => {
                let two = T::one() + T::one();
                let d = g
                    .iter()
                    .zip(self.data(a))
                    .map(|(&g, &x)| two * g * x)
                    .collect();
                accumulate(grads, a, d);
            }
            &Op::LogSoftmax(a) => {
                let cols = *node.value.shape().last().unwrap();
                let mut d = Vec::with_capacity(g.len());
                for (gr, yr) in g.chunks(cols).zip(node.value.data().chunks(cols)) {
                    let s: T = gr.iter().copied().sum();
                    d.extend(gr.iter().zip(yr).map(|(&g, &y)| g - y.exp() * s));
                }
                accumulate(grads, a, d);
            }
            &Op::Sum(a) => {
                accumulate(grads, a, vec![g[0]; self.data(a).len()]);
            }
            &Op::Mean(a) => {
                let n = self.data(a).len();
                let v = g[0] / T::of(n.max(1) as f64);
                accumulate(grads, a, vec![v; n]);
            }
            &Op::Reshape(a) => accumulate(grads, a, g.to_vec()),
            &Op::Transpose(a) => {
                let s = self.shape(a);
                let (r, c) = (s[0], s[1]);
                let mut d = vec![T::zero(); r * c];
                for i in 0..r {
                    for j in 0..c {
                        d[i * c + j] = g[j * r + i];
                    }
                }
                accumulate(grads, a, d);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p)[1];
                    if self.rg(p) {
                        let d = g.chunks(total).flat_map(|row| &row[offset..offset + w]).copied().collect();
                        accumulate(grads, p, d);
                    }
                    offset += w;
                }
            }
            Op::Conv2d {
                x,
                w,
                b,
                geom,
                cols,
            } => {
                let (p, np, k) = (geom.p(), geom.n * geom.p(), geom.k());
                // Regroup the output gradient as O × (N·P).
                let mut gt = vec![T::zero(); geom.o * np];
                for n in 0..geom.n {
                    for o in 0..geom.o {
                        let src = &g[(n * geom.o + o) * p..(n * geom.o + o + 1) * p];
                        gt[o * np + n * p..o * np + (n + 1) * p].copy_from_slice(src);
                    }
                }
                if let Some(b) = *b {
                    if self.rg(b) {
                        let db = gt.chunks(np).map(|row| row.iter().copied().sum()).collect();
                        accumulate(grads, b, db);
                    }
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); geom.o * k];
                    T::gemm(geom.o, np, k, T::one(), &gt, false, cols, true, T::zero(), &mut dw);
                    accumulate(grads, *w, dw);
                }
                if self.rg(*x) {
                    let mut dcols = vec![T::zero(); k * np];
                    T::gemm(k, geom.o, np, T::one(), self.data(*w), true, &gt, false, T::zero(), &mut dcols);
                    accumulate(grads, *x, col2im(&dcols, geom));
                }
            }
            Op::MaxPool { x, argmax } => {
                let mut d = vec![T::zero(); self.data(*x).len()];
                for (&src, &gv) in argmax.iter().zip(g) {
                    d[src] = d[src] + gv;
                }
                accumulate(grads, *x, d);
            }
        }
    }
}

fn t_mark(t: bool) -> &'static str {
    if t {
        "ᵀ"
    } else {
        ""
    }
}

fn accumulate<T: Float>(grads: &mut [Option<Vec<T>>], v: Var, d: Vec<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.iter_mut().zip(&d).for_each(|(a, &b)| *a = *a + b),
        slot @ None => *slot = Some(d),
    }
}

/// Unfolds input patches into a `(C·KH·KW) × (N·OH·OW)` matrix.
fn im2col<T: Float>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let (p, np) = (g.p(), g.n * g.p());
    let mut cols = vec![T::zero(); g.k() * np];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let plane = &x[(n * g.c + c) * g.h * g.w..(n * g.c + c + 1) * g.h * g.w];
                    for oi in 0..g.oh {
                        let ii = (oi * g.stride + ki) as isize - g.pad_h as isize;
                        if ii < 0 || ii >= g.h as isize {
                            continue;
                        }
                        let src_row = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                        let dst = &mut dst_row[n * p + oi * g.ow..n * p + (oi + 1) * g.ow];
                        for (oj, d) in dst.iter_mut().enumerate() {
                            let jj = (oj * g.stride + kj) as isize - g.pad_w as isize;
                            if jj >= 0 && jj < g.w as isize {
                                *d = src_row[jj as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
fn col2im<T: Float>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let (p, np) = (g.p(), g.n * g.p());
    let mut x = vec![T::zero(); g.n * g.c * g.h * g.w];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src_row = &cols[row * np..(row + 1) * np];
                for n in 0..g.n {
                    let base = (n * g.c + c) * g.h * g.w;
                    for oi in 0..g.oh {
                        let ii = (oi * g.stride + ki) as isize - g.pad_h as isize;
                        if ii < 0 || ii >= g.h as isize {
                            continue;
                        }
                        for oj in 0..g.ow {
                            let jj = (oj * g.stride + kj) as isize - g.pad_w as isize;
                            if jj >= 0 && jj < g.w as isize {
                                let idx = base + ii as usize * g.w + jj as usize;
                                x[idx] = x[idx] + src_row[n * p + oi * g.ow + oj];
                            }
                        }
                    }
                }
            }
        }
    }
    x
}

impl<T: Float> ParameterSet<T> {
    /// Adds the gradients of bound leaves into the stored gradients.
    ///
    /// Bound parameters the loss does not depend on receive an explicit zero.
    pub fn accumulate_grads(&mut self, grads: &Gradients<T>, bindings: &Bindings) -> Result<()> {
        for (name, &var) in bindings {
            let t = self
                .get_mut(name)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter `{name}`")))?;
            match grads.get(var) {
                Some(g) => t.accumulate_grad(g)?,
                None => {
                    let zeros = vec![T::zero(); t.numel()];
                    t.accumulate_grad(&zeros)?;
                }
            }
        }
        Ok(())
    }
}
