use super::kernels::{self, axis_split, ConvDims};
use super::Tensor;
use crate::error::{shape_err, DestError, Result};

/// Handle to a value recorded on a [`Tape`].
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
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddBias { x: Var, bias: Var, axis: usize },
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Elu(Var),
    Sigmoid(Var),
    Log(Var),
    Exp(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Transpose { x: Var, rows: usize, cols: usize },
    Reshape(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    Slice { x: Var, axis: usize, start: usize },
    Sum(Var),
    Mean(Var),
    SumAxis { x: Var, axis: usize },
    MaxAxis { x: Var, axis: usize, argmax: Vec<usize> },
    Softmax { x: Var, axis: usize },
    LogSoftmax { x: Var, axis: usize },
    Conv1d { x: Var, w: Var, dilation: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

/// Reverse-mode tape over a static per-forward graph.
///
/// Nodes are appended in evaluation order, so a single reverse sweep
/// visits every consumer before its producers.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, requires_grad: bool, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            requires_grad,
            op,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a tensor as a leaf; gradient tracking follows `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        )
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || numel == 0 {
            return Err(DestError::Dimension(format!(
                "constant of shape {shape:?} given {} values",
                data.len()
            )));
        }
        Ok(self.push(shape.to_vec(), data, false, Op::Leaf))
    }

    /// Copy of `v`'s value that does not propagate gradients.
    pub fn detach(&mut self, v: Var) -> Var {
        let node = &self.nodes[v.0];
        let (shape, value) = (node.shape.clone(), node.value.clone());
        self.push(shape, value, false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = &self.nodes[v.0];
        Tensor::new(n.shape.clone(), n.value.clone()).expect("tape node invariant")
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![0.0; m * n];
        kernels::matmul_acc(self.value(a), self.value(b), &mut out, m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], out, rg, Op::MatMul { a, b, m, k, n }))
    }

    /// Same-padded dilated convolution of `x[c_in×T]` with `w[c_out×c_in×k]`.
    pub fn conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x), self.shape(w));
        if sx.len() != 2 || sw.len() != 3 || sw[1] != sx[0] {
            return Err(shape_err("conv1d", sx, sw));
        }
        if sw[2] % 2 == 0 {
            return Err(DestError::Config(format!(
                "conv1d kernel size must be odd, got {}",
                sw[2]
            )));
        }
        if dilation == 0 {
            return Err(DestError::Config("conv1d dilation must be >= 1".into()));
        }
        let dims = ConvDims {
            c_in: sx[0],
            c_out: sw[0],
            k: sw[2],
            t: sx[1],
            dilation,
        };
        let mut out = vec![0.0; dims.c_out * dims.t];
        kernels::conv1d_forward(self.value(x), self.value(w), &mut out, &dims);
        let rg = self.rg(x) || self.rg(w);
        Ok(self.push(vec![dims.c_out, dims.t], out, rg, Op::Conv1d { x, w, dilation }))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(DestError::Dimension(format!(
                "transpose expects a matrix, got {s:?}"
            )));
        }
        let (rows, cols) = (s[0], s[1]);
        let v = self.value(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = v[r * cols + c];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(vec![cols, rows], out, rg, Op::Transpose { x, rows, cols }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() || shape.contains(&0) {
            return Err(shape_err("reshape", self.shape(x), shape));
        }
        let v = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), v, rg, Op::Reshape(x)))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| DestError::Dimension("concat of zero tensors".into()))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(DestError::Dimension(format!(
                "concat axis {axis} out of range for {base:?}"
            )));
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
                return Err(shape_err("concat", &base, s));
            }
            total += s[axis];
        }
        let mut shape = base.clone();
        shape[axis] = total;
        let (outer, _, inner) = axis_split(&shape, axis);
        let mut out = Vec::with_capacity(shape.iter().product());
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                let chunk = len * inner;
                out.extend_from_slice(&self.value(v)[o * chunk..(o + 1) * chunk]);
            }
        }
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            shape,
            out,
            rg,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
        ))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || len == 0 || start + len > s[axis] {
            return Err(DestError::Dimension(format!(
                "slice [{start}, {}) on axis {axis} of {s:?}",
                start + len
            )));
        }
        let (outer, full, inner) = axis_split(&s, axis);
        let v = self.value(x);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * full + start) * inner;
            out.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::Slice { x, axis, start }))
    }

    /// Splits `axis` into `groups` equal contiguous parts.
    pub fn split(&mut self, x: Var, axis: usize, groups: usize) -> Result<Vec<Var>> {
        let s = self.shape(x);
        if axis >= s.len() || groups == 0 || s[axis] % groups != 0 {
            return Err(DestError::Config(format!(
                "cannot split axis {axis} of {s:?} into {groups} equal groups"
            )));
        }
        let len = s[axis] / groups;
        (0..groups)
            .map(|g| self.slice(x, axis, g * len, len))
            .collect()
    }

    // ---- elementwise ----------------------------------------------------

    fn binary(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<f64>, bool)> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(what, self.shape(a), self.shape(b)));
        }
        let out = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok((out, self.rg(a) || self.rg(b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Mul(a, b)))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "div", |x, y| x / y)?;
        let shape = self.shape(a).to_vec();
        Ok(self.push(shape, out, rg, Op::Div(a, b)))
    }

    /// Adds `bias[n]` broadcast along `axis` (which must have extent `n`).
    pub fn add_bias(&mut self, x: Var, bias: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let sb = self.shape(bias);
        if axis >= s.len() || sb.len() != 1 || sb[0] != s[axis] {
            return Err(shape_err("add_bias", &s, sb));
        }
        let (outer, len, inner) = axis_split(&s, axis);
        let b = self.value(bias);
        let mut out = self.value(x).to_vec();
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                out[base..base + inner].iter_mut().for_each(|v| *v += b[a]);
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(s, out, rg, Op::AddBias { x, bias, axis }))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, out, rg, op)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    /// Subgradient at zero is zero.
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    pub fn elu(&mut self, x: Var) -> Var {
        self.unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, f64::ln, Op::Log(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    /// Clips into `[lo, hi]`; gradient flows only where the input is strictly inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.unary(x, |v| v.clamp(lo, hi), Op::Clamp { x, lo, hi })
    }

    // ---- reductions -----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], rg, Op::Mean(x))
    }

    /// Sums out `axis`, removing it from the shape.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&s, axis);
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..len {
                let base = (o * len + a) * inner;
                add_into(&mut out[o * inner..(o + 1) * inner], &v[base..base + inner]);
            }
        }
        let shape = reduced_shape(&s, axis);
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::SumAxis { x, axis }))
    }

    /// Maximum over `axis`, removing it; ties route the gradient to the first maximum.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let s = self.shape(x).to_vec();
        let (outer, len, inner) = axis_split(&s, axis);
        let v = self.value(x);
        let mut out = vec![f64::NEG_INFINITY; outer * inner];
        let mut argmax = vec![0usize; outer * inner];
        for o in 0..outer {
            for i in 0..inner {
                for a in 0..len {
                    let val = v[(o * len + a) * inner + i];
                    if val > out[o * inner + i] {
                        out[o * inner + i] = val;
                        argmax[o * inner + i] = a;
                    }
                }
            }
        }
        let shape = reduced_shape(&s, axis);
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::MaxAxis { x, axis, argmax }))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        let out = kernels::softmax_forward(self.value(x), &shape, axis, false);
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::Softmax { x, axis }))
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.check_axis(x, axis)?;
        let shape = self.shape(x).to_vec();
        let out = kernels::softmax_forward(self.value(x), &shape, axis, true);
        let rg = self.rg(x);
        Ok(self.push(shape, out, rg, Op::LogSoftmax { x, axis }))
    }

    fn check_axis(&self, x: Var, axis: usize) -> Result<()> {
        if axis >= self.shape(x).len() {
            return Err(DestError::Dimension(format!(
                "axis {axis} out of range for {:?}",
                self.shape(x)
            )));
        }
        Ok(())
    }

    // ---- backward -------------------------------------------------------

    /// Seeds `d loss / d loss = 1` and sweeps the tape in reverse.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(DestError::Dimension(format!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            )));
        }
        for g in &mut self.grads {
            *g = None;
        }
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.backprop_node(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn backprop_node(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        let node = &nodes[i];
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            let n = &nodes[v.0];
            if !n.requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; n.value.len()]);
            f(buf);
        };
        let val = |v: Var| nodes[v.0].value.as_slice();
        let y = node.value.as_slice();
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                acc(a, &mut |da| kernels::matmul_grad_a(g, val(b), da, m, k, n));
                acc(b, &mut |db| kernels::matmul_grad_b(val(a), g, db, m, k, n));
            }
            &Op::Conv1d { x, w, dilation } => {
                let sw = &nodes[w.0].shape;
                let dims = ConvDims {
                    c_in: sw[1],
                    c_out: sw[0],
                    k: sw[2],
                    t: nodes[x.0].shape[1],
                    dilation,
                };
                acc(x, &mut |dx| {
                    kernels::conv1d_backward(val(x), val(w), g, Some(dx), None, &dims)
                });
                acc(w, &mut |dw| {
                    kernels::conv1d_backward(val(x), val(w), g, None, Some(dw), &dims)
                });
            }
            &Op::Add(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| add_into(d, g));
            }
            &Op::Sub(a, b) => {
                acc(a, &mut |d| add_into(d, g));
                acc(b, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d -= g));
            }
            &Op::Mul(a, b) => {
                acc(a, &mut |d| {
                    for ((d, g), y) in d.iter_mut().zip(g).zip(val(b)) {
                        *d += g * y;
                    }
                });
                acc(b, &mut |d| {
                    for ((d, g), x) in d.iter_mut().zip(g).zip(val(a)) {
                        *d += g * x;
                    }
                });
            }
            &Op::Div(a, b) => {
                acc(a, &mut |d| {
                    for ((d, g), q) in d.iter_mut().zip(g).zip(val(b)) {
                        *d += g / q;
                    }
                });
                acc(b, &mut |d| {
                    for (((d, g), q), out) in d.iter_mut().zip(g).zip(val(b)).zip(y) {
                        *d -= g * out / q;
                    }
                });
            }
            &Op::AddBias { x, bias, axis } => {
                acc(x, &mut |d| add_into(d, g));
                let (outer, len, inner) = axis_split(&node.shape, axis);
                acc(bias, &mut |d| {
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            d[a] += g[base..base + inner].iter().sum::<f64>();
                        }
                    }
                });
            }
            &Op::Scale(x, c) => acc(x, &mut |d| d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)),
            &Op::AddScalar(x) | &Op::Reshape(x) => acc(x, &mut |d| add_into(d, g)),
            &Op::Relu(x) => acc(x, &mut |d| {
                for ((d, g), &xv) in d.iter_mut().zip(g).zip(val(x)) {
                    if xv > 0.0 {
                        *d += g;
                    }
                }
            }),
            &Op::Elu(x) => acc(x, &mut |d| {
                for ((d, g), &xv) in d.iter_mut().zip(g).zip(val(x)) {
                    *d += if xv > 0.0 { *g } else { g * xv.exp() };
                }
            }),
            &Op::Sigmoid(x) => acc(x, &mut |d| {
                for ((d, g), &s) in d.iter_mut().zip(g).zip(y) {
                    *d += g * s * (1.0 - s);
                }
            }),
            &Op::Log(x) => acc(x, &mut |d| {
                for ((d, g), &xv) in d.iter_mut().zip(g).zip(val(x)) {
                    *d += g / xv;
                }
            }),
            &Op::Exp(x) => acc(x, &mut |d| {
                for ((d, g), &e) in d.iter_mut().zip(g).zip(y) {
                    *d += g * e;
                }
            }),
            &Op::Clamp { x, lo, hi } => acc(x, &mut |d| {
                for ((d, g), &xv) in d.iter_mut().zip(g).zip(val(x)) {
                    if xv > lo && xv < hi {
                        *d += g;
                    }
                }
            }),
            &Op::Transpose { x, rows, cols } => acc(x, &mut |d| {
                for r in 0..rows {
                    for c in 0..cols {
                        d[r * cols + c] += g[c * rows + r];
                    }
                }
            }),
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(&node.shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let len = nodes[v.0].shape[*axis];
                    acc(v, &mut |d| {
                        for o in 0..outer {
                            let src = (o * total + offset) * inner;
                            let dst = o * len * inner;
                            add_into(&mut d[dst..dst + len * inner], &g[src..src + len * inner]);
                        }
                    });
                    offset += len;
                }
            }
            &Op::Slice { x, axis, start } => {
                let (outer, full, inner) = axis_split(&nodes[x.0].shape, axis);
                let len = node.shape[axis];
                acc(x, &mut |d| {
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        let src = o * len * inner;
                        add_into(&mut d[dst..dst + len * inner], &g[src..src + len * inner]);
                    }
                });
            }
            &Op::Sum(x) => acc(x, &mut |d| d.iter_mut().for_each(|d| *d += g[0])),
            &Op::Mean(x) => {
                let n = nodes[x.0].value.len() as f64;
                acc(x, &mut |d| d.iter_mut().for_each(|d| *d += g[0] / n));
            }
            &Op::SumAxis { x, axis } => {
                let (outer, len, inner) = axis_split(&nodes[x.0].shape, axis);
                acc(x, &mut |d| {
                    for o in 0..outer {
                        for a in 0..len {
                            let base = (o * len + a) * inner;
                            add_into(&mut d[base..base + inner], &g[o * inner..(o + 1) * inner]);
                        }
                    }
                });
            }
            Op::MaxAxis { x, axis, argmax } => {
                let (outer, len, inner) = axis_split(&nodes[x.0].shape, *axis);
                acc(*x, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let a = argmax[o * inner + i];
                            d[(o * len + a) * inner + i] += g[o * inner + i];
                        }
                    }
                });
            }
            &Op::Softmax { x, axis } => {
                let (outer, len, inner) = axis_split(&node.shape, axis);
                acc(x, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + i;
                            let s: f64 = (0..len).map(|a| g[idx(a)] * y[idx(a)]).sum();
                            for a in 0..len {
                                d[idx(a)] += y[idx(a)] * (g[idx(a)] - s);
                            }
                        }
                    }
                });
            }
            &Op::LogSoftmax { x, axis } => {
                let (outer, len, inner) = axis_split(&node.shape, axis);
                acc(x, &mut |d| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let idx = |a: usize| (o * len + a) * inner + i;
                            let s: f64 = (0..len).map(|a| g[idx(a)]).sum();
                            for a in 0..len {
                                d[idx(a)] += g[idx(a)] - y[idx(a)].exp() * s;
                            }
                        }
                    }
                });
            }
        }
    }
}

fn reduced_shape(s: &[usize], axis: usize) -> Vec<usize> {
    let mut shape: Vec<usize> = s
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != axis)
        .map(|(_, &d)| d)
        .collect();
    if shape.is_empty() {
        shape.push(1);
    }
    shape
}

#[inline]
fn add_into(d: &mut [f64], g: &[f64]) {
    d.iter_mut().zip(g).for_each(|(d, g)| *d += g);
}

#[inline]
pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
