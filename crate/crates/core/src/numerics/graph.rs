//! Dynamic computation record with reverse-mode differentiation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each operation appends
//! a node holding its value and the rule needed to push gradients back to its
//! inputs; [`Graph::backward`] walks the nodes in reverse creation order,
//! which is a valid topological order because inputs always precede outputs.
//!
//! Broadcasting is limited to leading-batch expansion: in binary element-wise
//! ops the smaller operand's shape must be a suffix of the larger one (a
//! rank-0 scalar is a suffix of everything).

use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use super::{Gradients, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Unary {
    Neg,
    Sin,
    Cos,
    Sigmoid,
    Tanh,
    Exp,
    Log,
    Log1p,
    Gelu,
    Relu,
    Abs,
    Square,
    Sqrt,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Unary(Var, Unary),
    MatMul(Var, Var),
    Transpose(Var),
    Softmax(Var, usize),
    LogSoftmax(Var),
    LayerNorm(Var, Vec<T>),
    Conv1d(Var, Var, usize),
    MaxPool(Var, Vec<usize>),
    AvgPoolTo(Var),
    Embedding(Var, Vec<usize>),
    Concat(Vec<Var>, usize),
    Slice(Var, usize, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
    SqNorm(Var),
    Pick(Var, Vec<usize>),
    Autocorr(Var),
    Reshape(Var),
    Lerp(Var, Var, Var),
}

struct Node<T> {
    value: Arc<Tensor<T>>,
    op: Op<T>,
    grad: Option<Tensor<T>>,
}

/// Per-step computation record.
pub struct Graph<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<usize, Var>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        left: a.to_vec(),
        right: b.to_vec(),
    }
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    small.len() <= big.len() && big[big.len() - small.len()..] == *small
}

/// (outer, extent, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn gelu_parts<T: Real>(x: T) -> (T, T) {
    // tanh approximation; returns (value, derivative)
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let k = T::lit(0.044715);
    let half = T::lit(0.5);
    let one = T::one();
    let x3 = x * x * x;
    let u = c * (x + k * x3);
    let t = u.tanh();
    let value = half * x * (one + t);
    let du = c * (one + T::lit(3.0) * k * x * x);
    let deriv = half * (one + t) + half * x * (one - t * t) * du;
    (value, deriv)
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::with_capacity(256)),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op<T>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            op,
            grad: None,
        });
        Var(nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes.borrow()[v.0].value.item()
    }

    /// Accumulated gradient of a leaf or parameter node.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.nodes.borrow()[v.0].grad.clone()
    }

    pub fn zero_grad(&self) {
        for n in self.nodes.borrow_mut().iter_mut() {
            n.grad = None;
        }
    }

    /// Non-trainable input.
    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Trainable leaf not tied to a store; its gradient is read with [`Graph::grad`].
    pub fn leaf(&self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn constant_scalar(&self, v: f64) -> Var {
        self.constant(Tensor::scalar(T::lit(v)))
    }

    /// Binds a stored parameter; repeated lookups return the same node.
    pub fn param(&self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Data(format!("unknown parameter `{name}`")))?;
        if let Some(&v) = self.params.borrow().get(&idx) {
            return Ok(v);
        }
        let (_, arc) = store.arc_at(idx);
        let v = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value: arc,
                op: Op::Param,
                grad: None,
            });
            Var(nodes.len() - 1)
        };
        self.params.borrow_mut().insert(idx, v);
        Ok(v)
    }

    /// Gradients of every bound parameter, aligned with `store`.
    pub fn param_grads(&self, store: &ParamStore<T>) -> Gradients<T> {
        let mut out = Gradients::zeros_like(store);
        let nodes = self.nodes.borrow();
        for (&idx, v) in self.params.borrow().iter() {
            if let Some(g) = &nodes[v.0].grad {
                out.accumulate(idx, g);
            }
        }
        out
    }

    // ---- element-wise binary ----

    fn binary(
        &self,
        op: &'static str,
        a: Var,
        b: Var,
        commutative: bool,
        f: impl Fn(T, T) -> T,
        make: impl Fn(Var, Var) -> Op<T>,
    ) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        let (a, b, va, vb) = if is_suffix(vb.shape(), va.shape()) {
            (a, b, va, vb)
        } else if commutative && is_suffix(va.shape(), vb.shape()) {
            (b, a, vb, va)
        } else {
            return Err(shape_err(op, va.shape(), vb.shape()));
        };
        let nb = vb.len();
        let data = va
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| f(x, vb.data()[i % nb]))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, make(a, b)))
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, true, |x, y| x + y, Op::Add)
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, false, |x, y| x - y, Op::Sub)
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, true, |x, y| x * y, Op::Mul)
    }

    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, false, |x, y| x / y, Op::Div)
    }

    /// `a + w·(b − a)` for a scalar weight `w`, clamped to the element-wise
    /// envelope of `a` and `b` so rounding never leaves the segment.
    pub fn lerp(&self, a: Var, b: Var, w: Var) -> Result<Var> {
        let (va, vb, vw) = (self.value(a), self.value(b), self.value(w));
        if va.shape() != vb.shape() {
            return Err(shape_err("lerp", va.shape(), vb.shape()));
        }
        if vw.len() != 1 {
            return Err(shape_err("lerp", va.shape(), vw.shape()));
        }
        let t = vw.item();
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| (x + t * (y - x)).max(x.min(y)).min(x.max(y)))
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Lerp(a, b, w)))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let c = T::lit(c);
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::AddScalar(a))
    }

    /// `c - a`
    pub fn rsub_scalar(&self, c: f64, a: Var) -> Var {
        let neg = self.scale(a, -1.0);
        self.add_scalar(neg, c)
    }

    // ---- element-wise unary ----

    fn unary(&self, a: Var, kind: Unary) -> Result<Var> {
        let va = self.value(a);
        if kind == Unary::Log && va.data().iter().any(|&x| x <= T::zero()) {
            return Err(Error::domain("log", "non-positive input"));
        }
        if kind == Unary::Sqrt && va.data().iter().any(|&x| x < T::zero()) {
            return Err(Error::domain("sqrt", "negative input"));
        }
        let f = |x: T| -> T {
            match kind {
                Unary::Neg => -x,
                Unary::Sin => x.sin(),
                Unary::Cos => x.cos(),
                Unary::Sigmoid => T::one() / (T::one() + (-x).exp()),
                Unary::Tanh => x.tanh(),
                Unary::Exp => x.exp(),
                Unary::Log => x.ln(),
                Unary::Log1p => x.ln_1p(),
                Unary::Gelu => gelu_parts(x).0,
                Unary::Relu => x.max(T::zero()),
                Unary::Abs => x.abs(),
                Unary::Square => x * x,
                Unary::Sqrt => x.sqrt(),
            }
        };
        let out = va.map(f);
        Ok(self.push(out, Op::Unary(a, kind)))
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Unary::Neg).expect("neg is total")
    }
    pub fn sin(&self, a: Var) -> Var {
        self.unary(a, Unary::Sin).expect("sin is total")
    }
    pub fn cos(&self, a: Var) -> Var {
        self.unary(a, Unary::Cos).expect("cos is total")
    }
    pub fn sigmoid(&self, a: Var) -> Var {
        self.unary(a, Unary::Sigmoid).expect("sigmoid is total")
    }
    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Unary::Tanh).expect("tanh is total")
    }
    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Unary::Exp).expect("exp is total")
    }
    pub fn log(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Log)
    }
    /// `ln(1 + x)`; callers keep `x > -1`.
    pub fn log1p(&self, a: Var) -> Var {
        self.unary(a, Unary::Log1p).expect("log1p")
    }
    pub fn gelu(&self, a: Var) -> Var {
        self.unary(a, Unary::Gelu).expect("gelu is total")
    }
    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Unary::Relu).expect("relu is total")
    }
    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Unary::Abs).expect("abs is total")
    }
    pub fn square(&self, a: Var) -> Var {
        self.unary(a, Unary::Square).expect("square is total")
    }
    pub fn sqrt(&self, a: Var) -> Result<Var> {
        self.unary(a, Unary::Sqrt)
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.rank() != 2 || vb.rank() != 2 || va.shape()[1] != vb.shape()[0] {
            return Err(shape_err("matmul", va.shape(), vb.shape()));
        }
        let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
        let mut c = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            va.data(),
            k as isize,
            1,
            vb.data(),
            n as isize,
            1,
            T::zero(),
            &mut c,
            n as isize,
            1,
        );
        Ok(self.push(Tensor::new(vec![m, n], c)?, Op::MatMul(a, b)))
    }

    pub fn transpose(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() != 2 {
            return Err(shape_err("transpose", va.shape(), &[]));
        }
        let (r, c) = (va.shape()[0], va.shape()[1]);
        let d = va.data();
        let out = Tensor::from_fn(&[c, r], |i| d[(i % r) * c + i / r]);
        Ok(self.push(out, Op::Transpose(a)))
    }

    // ---- normalizations ----

    pub fn softmax(&self, a: Var, axis: usize) -> Result<Var> {
        let va = self.value(a);
        if axis >= va.rank() {
            return Err(Error::domain(
                "softmax",
                format!("axis {axis} for shape {:?}", va.shape()),
            ));
        }
        let (outer, n, inner) = split_axis(va.shape(), axis);
        let x = va.data();
        let mut y = vec![T::zero(); x.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * n + j) * inner + i;
                let mut mx = T::neg_infinity();
                for j in 0..n {
                    mx = mx.max(x[idx(j)]);
                }
                let mut s = T::zero();
                for j in 0..n {
                    let e = (x[idx(j)] - mx).exp();
                    y[idx(j)] = e;
                    s += e;
                }
                for j in 0..n {
                    y[idx(j)] /= s;
                }
            }
        }
        let out = Tensor::new(va.shape().to_vec(), y)?;
        Ok(self.push(out, Op::Softmax(a, axis)))
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.rank() == 0 {
            return Err(shape_err("log_softmax", va.shape(), &[]));
        }
        let c = va.cols();
        let mut y = va.data().to_vec();
        for row in y.chunks_mut(c) {
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let out = Tensor::new(va.shape().to_vec(), y)?;
        Ok(self.push(out, Op::LogSoftmax(a)))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&self, a: Var, eps: f64) -> Result<Var> {
        let va = self.value(a);
        if va.rank() == 0 {
            return Err(shape_err("layer_norm", va.shape(), &[]));
        }
        let c = va.cols();
        let n = T::lit(c as f64);
        let mut y = va.data().to_vec();
        let mut rstds = Vec::with_capacity(va.rows());
        for row in y.chunks_mut(c) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let rstd = T::one() / (var + T::lit(eps)).sqrt();
            for v in row.iter_mut() {
                *v = (*v - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let out = Tensor::new(va.shape().to_vec(), y)?;
        Ok(self.push(out, Op::LayerNorm(a, rstds)))
    }

    // ---- temporal ops on [frames, channels] ----

    /// Same-padded 1-D convolution over axis 0 of `x: [T, C_in]` with
    /// `w: [kernel * C_in, C_out]` (row `k * C_in + c`). `kernel` must be odd.
    pub fn conv1d(&self, x: Var, w: Var, kernel: usize) -> Result<Var> {
        let (vx, vw) = (self.value(x), self.value(w));
        if vx.rank() != 2 || vw.rank() != 2 || kernel.is_multiple_of(2) || vw.shape()[0] != kernel * vx.shape()[1] {
            return Err(shape_err("conv1d", vx.shape(), vw.shape()));
        }
        let (t, cin) = (vx.shape()[0], vx.shape()[1]);
        let cout = vw.shape()[1];
        let col = im2col(vx.data(), t, cin, kernel);
        let kc = kernel * cin;
        let mut y = vec![T::zero(); t * cout];
        T::gemm(
            t,
            kc,
            cout,
            T::one(),
            &col,
            kc as isize,
            1,
            vw.data(),
            cout as isize,
            1,
            T::zero(),
            &mut y,
            cout as isize,
            1,
        );
        Ok(self.push(Tensor::new(vec![t, cout], y)?, Op::Conv1d(x, w, kernel)))
    }

    /// Max over non-overlapping windows of `size` rows; output has ⌈T/size⌉ rows.
    pub fn max_pool_time(&self, x: Var, size: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 || size == 0 || vx.shape()[0] == 0 {
            return Err(shape_err("max_pool_time", vx.shape(), &[size]));
        }
        let (t, c) = (vx.shape()[0], vx.shape()[1]);
        let out_t = t.div_ceil(size);
        let mut y = vec![T::zero(); out_t * c];
        let mut arg = vec![0usize; out_t * c];
        for o in 0..out_t {
            for ch in 0..c {
                let mut best = o * size;
                for r in o * size..((o + 1) * size).min(t) {
                    if vx.data()[r * c + ch] > vx.data()[best * c + ch] {
                        best = r;
                    }
                }
                y[o * c + ch] = vx.data()[best * c + ch];
                arg[o * c + ch] = best;
            }
        }
        Ok(self.push(Tensor::new(vec![out_t, c], y)?, Op::MaxPool(x, arg)))
    }

    /// Mean over non-overlapping windows of `size` rows (last window may be partial).
    pub fn mean_pool_time(&self, x: Var, size: usize) -> Result<Var> {
        let t = self.shape(x).first().copied().unwrap_or(0);
        if size == 0 {
            return Err(shape_err("mean_pool_time", &[t], &[size]));
        }
        self.avg_pool_to(x, t.div_ceil(size))
    }

    /// Adaptive average pooling over axis 0 to exactly `out_len` rows.
    pub fn avg_pool_to(&self, x: Var, out_len: usize) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 || out_len == 0 || out_len > vx.shape()[0] {
            return Err(shape_err("avg_pool_to", vx.shape(), &[out_len]));
        }
        let (t, c) = (vx.shape()[0], vx.shape()[1]);
        let mut y = vec![T::zero(); out_len * c];
        for o in 0..out_len {
            let (s, e) = pool_bounds(o, t, out_len);
            let inv = T::lit(1.0 / (e - s) as f64);
            for r in s..e {
                for ch in 0..c {
                    y[o * c + ch] += vx.data()[r * c + ch] * inv;
                }
            }
        }
        Ok(self.push(Tensor::new(vec![out_len, c], y)?, Op::AvgPoolTo(x)))
    }

    pub fn embedding(&self, table: Var, ids: &[usize]) -> Result<Var> {
        let vt = self.value(table);
        if vt.rank() != 2 {
            return Err(shape_err("embedding", vt.shape(), &[]));
        }
        let (v, d) = (vt.shape()[0], vt.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::domain("embedding", format!("id {bad} out of range {v}")));
        }
        let mut y = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            y.extend_from_slice(vt.row(i));
        }
        Ok(self.push(Tensor::new(vec![ids.len(), d], y)?, Op::Embedding(table, ids.to_vec())))
    }

    // ---- structural ----

    pub fn concat(&self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = parts
            .first()
            .map(|&p| self.shape(p))
            .ok_or_else(|| Error::domain("concat", "no inputs"))?;
        if axis >= first.len() {
            return Err(shape_err("concat", &first, &[axis]));
        }
        let vals: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        for v in &vals {
            let s = v.shape();
            let same =
                s.len() == first.len() && s.iter().zip(&first).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !same {
                return Err(shape_err("concat", &first, s));
            }
        }
        let (outer, _, inner) = split_axis(&first, axis);
        let total: usize = vals.iter().map(|v| v.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for v in &vals {
                let n = v.shape()[axis] * inner;
                data.extend_from_slice(&v.data()[o * n..(o + 1) * n]);
            }
        }
        let mut shape = first;
        shape[axis] = total;
        Ok(self.push(Tensor::new(shape, data)?, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn slice(&self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() || start + len > vx.shape()[axis] {
            return Err(shape_err("slice", vx.shape(), &[axis, start, len]));
        }
        let (outer, n, inner) = split_axis(vx.shape(), axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            data.extend_from_slice(&vx.data()[base..base + len * inner]);
        }
        let mut shape = vx.shape().to_vec();
        shape[axis] = len;
        Ok(self.push(Tensor::new(shape, data)?, Op::Slice(x, axis, start)))
    }

    pub fn reshape(&self, x: Var, shape: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let out = (*vx).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    // ---- reductions ----

    pub fn sum(&self, x: Var) -> Var {
        let s = self.value(x).sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.sum() / T::lit(v.len().max(1) as f64);
        self.push(Tensor::scalar(m), Op::Mean(x))
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let vx = self.value(x);
        if axis >= vx.rank() {
            return Err(shape_err("sum_axis", vx.shape(), &[axis]));
        }
        let (outer, n, inner) = split_axis(vx.shape(), axis);
        let mut y = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    y[o * inner + i] += vx.data()[(o * n + j) * inner + i];
                }
            }
        }
        let mut shape = vx.shape().to_vec();
        shape.remove(axis);
        Ok(self.push(Tensor::new(shape, y)?, Op::SumAxis(x, axis)))
    }

    pub fn mean_axis(&self, x: Var, axis: usize) -> Result<Var> {
        let n = self.shape(x).get(axis).copied().unwrap_or(1).max(1);
        let s = self.sum_axis(x, axis)?;
        Ok(self.scale(s, 1.0 / n as f64))
    }

    pub fn squared_norm(&self, x: Var) -> Var {
        let s = self.value(x).squared_norm();
        self.push(Tensor::scalar(s), Op::SqNorm(x))
    }

    /// `out[r] = x[r, idx[r]]` for `x: [n, V]`.
    pub fn pick(&self, x: Var, idx: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 2 || vx.shape()[0] != idx.len() {
            return Err(shape_err("pick", vx.shape(), &[idx.len()]));
        }
        let c = vx.shape()[1];
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(Error::domain("pick", format!("index {bad} out of range {c}")));
        }
        let y = idx.iter().enumerate().map(|(r, &i)| vx.data()[r * c + i]).collect();
        Ok(self.push(Tensor::vector(y), Op::Pick(x, idx.to_vec())))
    }

    /// Mean-removed, biased, normalized autocorrelation of a 1-D series:
    /// `r[τ] = Σ x̃ₜ x̃ₜ₊τ / Σ x̃ₜ²` for τ = 0..n-1. An all-constant input
    /// yields `r = [1, 0, …]` with zero gradient.
    pub fn autocorr(&self, x: Var) -> Result<Var> {
        let vx = self.value(x);
        if vx.rank() != 1 || vx.is_empty() {
            return Err(shape_err("autocorr", vx.shape(), &[]));
        }
        let c = centered_autocov(vx.data());
        let n = c.len();
        let mut r = vec![T::zero(); n];
        r[0] = T::one();
        if c[0] > T::zero() {
            for k in 1..n {
                r[k] = c[k] / c[0];
            }
        }
        Ok(self.push(Tensor::vector(r), Op::Autocorr(x)))
    }

    // ---- backward ----

    /// Propagates d(loss)/d(node) to every reachable leaf and parameter,
    /// adding into any gradient already stored from an earlier call.
    pub fn backward(&self, loss: Var) -> Result<()> {
        let mut nodes = self.nodes.borrow_mut();
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::domain(
                "backward",
                format!("loss must be scalar, got shape {:?}", nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::full(nodes[loss.0].value.shape(), T::one()));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &nodes[id].op {
                Op::Leaf | Op::Param => {
                    let slot = &mut nodes[id].grad;
                    match slot {
                        Some(acc) => acc.add_assign(&g),
                        None => *slot = Some(g),
                    }
                }
                op => propagate(&nodes, id, op, &g, &mut grads),
            }
        }
        Ok(())
    }
}

fn pool_bounds(o: usize, t: usize, out: usize) -> (usize, usize) {
    let s = o * t / out;
    let e = ((o + 1) * t).div_ceil(out);
    (s, e.max(s + 1))
}

fn im2col<T: Real>(x: &[T], t: usize, cin: usize, kernel: usize) -> Vec<T> {
    let pad = kernel / 2;
    let kc = kernel * cin;
    let mut col = vec![T::zero(); t * kc];
    for r in 0..t {
        for k in 0..kernel {
            let src = r as isize + k as isize - pad as isize;
            if src < 0 || src >= t as isize {
                continue;
            }
            let src = src as usize;
            col[r * kc + k * cin..r * kc + (k + 1) * cin].copy_from_slice(&x[src * cin..(src + 1) * cin]);
        }
    }
    col
}

fn centered_autocov<T: Real>(x: &[T]) -> Vec<T> {
    let n = x.len();
    let mean = x.iter().copied().sum::<T>() / T::lit(n as f64);
    let xc: Vec<T> = x.iter().map(|&v| v - mean).collect();
    (0..n).map(|k| (0..n - k).map(|t| xc[t] * xc[t + k]).sum()).collect()
}

fn add_grad<T: Real>(grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// Sums a full-shape gradient down to a suffix-broadcast operand's shape.
fn reduce_to<T: Real>(g: &[T], shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut out = vec![T::zero(); n];
    for (i, &v) in g.iter().enumerate() {
        out[i % n] += v;
    }
    Tensor::new(shape.to_vec(), out).expect("reduced shape")
}

fn propagate<T: Real>(nodes: &[Node<T>], id: usize, op: &Op<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
    let val = |v: Var| nodes[v.0].value.as_ref();
    let out = nodes[id].value.as_ref();
    let gd = g.data();
    match op {
        Op::Leaf | Op::Param => unreachable!(),
        Op::Add(a, b) => {
            add_grad(grads, *a, g.clone());
            add_grad(grads, *b, reduce_to(gd, val(*b).shape()));
        }
        Op::Sub(a, b) => {
            add_grad(grads, *a, g.clone());
            let neg: Vec<T> = gd.iter().map(|&v| -v).collect();
            add_grad(grads, *b, reduce_to(&neg, val(*b).shape()));
        }
        Op::Mul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let nb = vb.len();
            let ga: Vec<T> = gd.iter().enumerate().map(|(i, &v)| v * vb.data()[i % nb]).collect();
            let gb: Vec<T> = gd.iter().zip(va.data()).map(|(&v, &x)| v * x).collect();
            add_grad(grads, *a, Tensor::new(va.shape().to_vec(), ga).expect("shape"));
            add_grad(grads, *b, reduce_to(&gb, vb.shape()));
        }
        Op::Div(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let nb = vb.len();
            let ga: Vec<T> = gd.iter().enumerate().map(|(i, &v)| v / vb.data()[i % nb]).collect();
            let gb: Vec<T> = gd
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    let y = vb.data()[i % nb];
                    -v * va.data()[i] / (y * y)
                })
                .collect();
            add_grad(grads, *a, Tensor::new(va.shape().to_vec(), ga).expect("shape"));
            add_grad(grads, *b, reduce_to(&gb, vb.shape()));
        }
        Op::Lerp(a, b, w) => {
            let (va, vb, vw) = (val(*a), val(*b), val(*w));
            let t = vw.item();
            let ga = g.map(|v| v * (T::one() - t));
            let gb = g.map(|v| v * t);
            let gw: T = gd
                .iter()
                .zip(va.data().iter().zip(vb.data()))
                .map(|(&v, (&x, &y))| v * (y - x))
                .sum();
            add_grad(grads, *a, ga);
            add_grad(grads, *b, gb);
            add_grad(grads, *w, Tensor::new(vw.shape().to_vec(), vec![gw]).expect("shape"));
        }
        Op::Scale(a, c) => add_grad(grads, *a, g.map(|v| v * *c)),
        Op::AddScalar(a) | Op::Reshape(a) => {
            let shape = val(*a).shape().to_vec();
            add_grad(grads, *a, Tensor::new(shape, gd.to_vec()).expect("shape"));
        }
        Op::Unary(a, kind) => {
            let x = val(*a).data();
            let y = out.data();
            let gx: Vec<T> = (0..gd.len())
                .map(|i| {
                    let (xi, yi) = (x[i], y[i]);
                    let d = match kind {
                        Unary::Neg => -T::one(),
                        Unary::Sin => xi.cos(),
                        Unary::Cos => -xi.sin(),
                        Unary::Sigmoid => yi * (T::one() - yi),
                        Unary::Tanh => T::one() - yi * yi,
                        Unary::Exp => yi,
                        Unary::Log => T::one() / xi,
                        Unary::Log1p => T::one() / (T::one() + xi),
                        Unary::Gelu => gelu_parts(xi).1,
                        Unary::Relu => {
                            if xi > T::zero() {
                                T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Abs => {
                            if xi > T::zero() {
                                T::one()
                            } else if xi < T::zero() {
                                -T::one()
                            } else {
                                T::zero()
                            }
                        }
                        Unary::Square => T::lit(2.0) * xi,
                        Unary::Sqrt => {
                            if yi > T::zero() {
                                T::lit(0.5) / yi
                            } else {
                                T::zero()
                            }
                        }
                    };
                    gd[i] * d
                })
                .collect();
            add_grad(grads, *a, Tensor::new(val(*a).shape().to_vec(), gx).expect("shape"));
        }
        Op::MatMul(a, b) => {
            let (va, vb) = (val(*a), val(*b));
            let (m, k, n) = (va.shape()[0], va.shape()[1], vb.shape()[1]);
            let mut ga = vec![T::zero(); m * k];
            // ga = g · bᵀ
            T::gemm(
                m,
                n,
                k,
                T::one(),
                gd,
                n as isize,
                1,
                vb.data(),
                1,
                n as isize,
                T::zero(),
                &mut ga,
                k as isize,
                1,
            );
            let mut gb = vec![T::zero(); k * n];
            // gb = aᵀ · g
            T::gemm(
                k,
                m,
                n,
                T::one(),
                va.data(),
                1,
                k as isize,
                gd,
                n as isize,
                1,
                T::zero(),
                &mut gb,
                n as isize,
                1,
            );
            add_grad(grads, *a, Tensor::new(vec![m, k], ga).expect("shape"));
            add_grad(grads, *b, Tensor::new(vec![k, n], gb).expect("shape"));
        }
        Op::Transpose(a) => {
            let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
            // g has shape [c, r]
            let gx = Tensor::from_fn(&[r, c], |i| gd[(i % c) * r + i / c]);
            add_grad(grads, *a, gx);
        }
        Op::Softmax(a, axis) => {
            let (outer, n, inner) = split_axis(out.shape(), *axis);
            let y = out.data();
            let mut gx = vec![T::zero(); y.len()];
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |j: usize| (o * n + j) * inner + i;
                    let dot: T = (0..n).map(|j| gd[idx(j)] * y[idx(j)]).sum();
                    for j in 0..n {
                        gx[idx(j)] = y[idx(j)] * (gd[idx(j)] - dot);
                    }
                }
            }
            add_grad(grads, *a, Tensor::new(out.shape().to_vec(), gx).expect("shape"));
        }
        Op::LogSoftmax(a) => {
            let c = out.cols();
            let y = out.data();
            let mut gx = vec![T::zero(); y.len()];
            for r in 0..y.len() / c {
                let s: T = gd[r * c..(r + 1) * c].iter().copied().sum();
                for j in 0..c {
                    gx[r * c + j] = gd[r * c + j] - y[r * c + j].exp() * s;
                }
            }
            add_grad(grads, *a, Tensor::new(out.shape().to_vec(), gx).expect("shape"));
        }
        Op::LayerNorm(a, rstds) => {
            let c = out.cols();
            let n = T::lit(c as f64);
            let y = out.data();
            let mut gx = vec![T::zero(); y.len()];
            for (r, &rstd) in rstds.iter().enumerate() {
                let row = r * c..(r + 1) * c;
                let mg = gd[row.clone()].iter().copied().sum::<T>() / n;
                let mgy = gd[row.clone()].iter().zip(&y[row]).map(|(&a, &b)| a * b).sum::<T>() / n;
                for j in 0..c {
                    let k = r * c + j;
                    gx[k] = rstd * (gd[k] - mg - y[k] * mgy);
                }
            }
            add_grad(grads, *a, Tensor::new(out.shape().to_vec(), gx).expect("shape"));
        }
        Op::Conv1d(x, w, kernel) => {
            let (vx, vw) = (val(*x), val(*w));
            let (t, cin) = (vx.shape()[0], vx.shape()[1]);
            let cout = vw.shape()[1];
            let kc = kernel * cin;
            let col = im2col(vx.data(), t, cin, *kernel);
            let mut gw = vec![T::zero(); kc * cout];
            T::gemm(
                kc,
                t,
                cout,
                T::one(),
                &col,
                1,
                kc as isize,
                gd,
                cout as isize,
                1,
                T::zero(),
                &mut gw,
                cout as isize,
                1,
            );
            let mut gcol = vec![T::zero(); t * kc];
            T::gemm(
                t,
                cout,
                kc,
                T::one(),
                gd,
                cout as isize,
                1,
                vw.data(),
                1,
                cout as isize,
                T::zero(),
                &mut gcol,
                kc as isize,
                1,
            );
            let pad = kernel / 2;
            let mut gx = vec![T::zero(); t * cin];
            for r in 0..t {
                for k in 0..*kernel {
                    let src = r as isize + k as isize - pad as isize;
                    if src < 0 || src >= t as isize {
                        continue;
                    }
                    let src = src as usize;
                    for ch in 0..cin {
                        gx[src * cin + ch] += gcol[r * kc + k * cin + ch];
                    }
                }
            }
            add_grad(grads, *x, Tensor::new(vec![t, cin], gx).expect("shape"));
            add_grad(grads, *w, Tensor::new(vec![kc, cout], gw).expect("shape"));
        }
        Op::MaxPool(x, arg) => {
            let vx = val(*x);
            let c = vx.shape()[1];
            let mut gx = vec![T::zero(); vx.len()];
            for (i, &src) in arg.iter().enumerate() {
                gx[src * c + i % c] += gd[i];
            }
            add_grad(grads, *x, Tensor::new(vx.shape().to_vec(), gx).expect("shape"));
        }
        Op::AvgPoolTo(x) => {
            let vx = val(*x);
            let (t, c) = (vx.shape()[0], vx.shape()[1]);
            let out_len = out.shape()[0];
            let mut gx = vec![T::zero(); t * c];
            for o in 0..out_len {
                let (s, e) = pool_bounds(o, t, out_len);
                let inv = T::lit(1.0 / (e - s) as f64);
                for r in s..e {
                    for ch in 0..c {
                        gx[r * c + ch] += gd[o * c + ch] * inv;
                    }
                }
            }
            add_grad(grads, *x, Tensor::new(vec![t, c], gx).expect("shape"));
        }
        Op::Embedding(table, ids) => {
            let vt = val(*table);
            let d = vt.shape()[1];
            let mut gt = vec![T::zero(); vt.len()];
            for (r, &i) in ids.iter().enumerate() {
                for j in 0..d {
                    gt[i * d + j] += gd[r * d + j];
                }
            }
            add_grad(grads, *table, Tensor::new(vt.shape().to_vec(), gt).expect("shape"));
        }
        Op::Concat(parts, axis) => {
            let (outer, total, inner) = split_axis(out.shape(), *axis);
            let mut offset = 0;
            for &p in parts {
                let vp = val(p);
                let n = vp.shape()[*axis];
                let mut gp = Vec::with_capacity(vp.len());
                for o in 0..outer {
                    let base = (o * total + offset) * inner;
                    gp.extend_from_slice(&gd[base..base + n * inner]);
                }
                add_grad(grads, p, Tensor::new(vp.shape().to_vec(), gp).expect("shape"));
                offset += n;
            }
        }
        Op::Slice(x, axis, start) => {
            let vx = val(*x);
            let (outer, n, inner) = split_axis(vx.shape(), *axis);
            let len = out.shape()[*axis];
            let mut gx = vec![T::zero(); vx.len()];
            for o in 0..outer {
                let base = (o * n + start) * inner;
                let gb = o * len * inner;
                gx[base..base + len * inner].copy_from_slice(&gd[gb..gb + len * inner]);
            }
            add_grad(grads, *x, Tensor::new(vx.shape().to_vec(), gx).expect("shape"));
        }
        Op::Sum(x) => {
            let vx = val(*x);
            add_grad(grads, *x, Tensor::full(vx.shape(), gd[0]));
        }
        Op::Mean(x) => {
            let vx = val(*x);
            let v = gd[0] / T::lit(vx.len().max(1) as f64);
            add_grad(grads, *x, Tensor::full(vx.shape(), v));
        }
        Op::SumAxis(x, axis) => {
            let vx = val(*x);
            let (outer, n, inner) = split_axis(vx.shape(), *axis);
            let gx = Tensor::from_fn(vx.shape(), |k| {
                let i = k % inner;
                let o = k / (n * inner);
                gd[o * inner + i]
            });
            add_grad(grads, *x, gx);
            let _ = outer;
        }
        Op::SqNorm(x) => {
            let vx = val(*x);
            let two = T::lit(2.0) * gd[0];
            add_grad(grads, *x, vx.map(|v| two * v));
        }
        Op::Pick(x, idx) => {
            let vx = val(*x);
            let c = vx.shape()[1];
            let mut gx = vec![T::zero(); vx.len()];
            for (r, &i) in idx.iter().enumerate() {
                gx[r * c + i] += gd[r];
            }
            add_grad(grads, *x, Tensor::new(vx.shape().to_vec(), gx).expect("shape"));
        }
        Op::Autocorr(x) => {
            let vx = val(*x);
            let xs = vx.data();
            let n = xs.len();
            let c = centered_autocov(xs);
            let mut gx = vec![T::zero(); n];
            if c[0] > T::zero() {
                let mean = xs.iter().copied().sum::<T>() / T::lit(n as f64);
                let xc: Vec<T> = xs.iter().map(|&v| v - mean).collect();
                let mut gc = vec![T::zero(); n];
                let mut g0 = T::zero();
                for k in 1..n {
                    gc[k] = gd[k] / c[0];
                    g0 -= gd[k] * c[k] / (c[0] * c[0]);
                }
                gc[0] = g0;
                let mut gxc = vec![T::zero(); n];
                for s in 0..n {
                    let mut acc = T::lit(2.0) * gc[0] * xc[s];
                    for k in 1..n {
                        if s + k < n {
                            acc += gc[k] * xc[s + k];
                        }
                        if s >= k {
                            acc += gc[k] * xc[s - k];
                        }
                    }
                    gxc[s] = acc;
                }
                let m = gxc.iter().copied().sum::<T>() / T::lit(n as f64);
                for s in 0..n {
                    gx[s] = gxc[s] - m;
                }
            }
            add_grad(grads, *x, Tensor::vector(gx));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_of_zero_is_half() {
        let g = Graph::<f64>::new();
        let x = g.constant_scalar(0.0);
        assert_eq!(g.scalar(g.sigmoid(x)), 0.5);
    }

    #[test]
    fn identity_matmul() {
        let g = Graph::<f64>::new();
        let a = Tensor::from_fn(&[3, 3], |i| (i as f64) * 0.7 - 1.3);
        let i3 = g.constant(Tensor::identity(3));
        let av = g.constant(a.clone());
        let p = g.matmul(i3, av).unwrap();
        assert_eq!(*g.value(p), a);
    }

    #[test]
    fn derivative_of_square() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::scalar(3.0));
        let y = g.square(x);
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 12.0);
        g.zero_grad();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[2]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
        let m = g.matmul(a, a).unwrap_err().to_string();
        assert!(m.contains("[2, 3]"));
    }

    #[test]
    fn log_rejects_non_positive() {
        let g = Graph::<f64>::new();
        let a = g.constant(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(g.log(a), Err(Error::Domain { .. })));
    }

    #[test]
    fn suffix_broadcast_bias() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::zeros(&[3, 2]));
        let b = g.leaf(Tensor::vector(vec![1.0, 2.0]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y).row(2), &[1.0, 2.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn pooling_lengths() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::from_fn(&[31, 2], |i| i as f64));
        assert_eq!(g.shape(g.max_pool_time(x, 2).unwrap()), vec![16, 2]);
        assert_eq!(g.shape(g.avg_pool_to(x, 16).unwrap()), vec![16, 2]);
        let one = g.avg_pool_to(x, 1).unwrap();
        assert_eq!(g.value(one).data(), &[30.0, 31.0]);
    }

    #[test]
    fn autocorr_constant_convention() {
        let g = Graph::<f64>::new();
        let x = g.leaf(Tensor::vector(vec![2.0; 5]));
        let r = g.autocorr(x).unwrap();
        assert_eq!(g.value(r).data(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
    }
}
