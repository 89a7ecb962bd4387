//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation appends a node holding its forward value and, when any
//! input requires a gradient, the data needed by its local gradient rule.
//! Nodes are only ever appended, so an input always precedes its consumers
//! and a single reverse sweep visits the graph in topological order.

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Abs(Var),
    Softmax {
        x: Var,
        outer: usize,
        n: usize,
        inner: usize,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        floored: Vec<bool>,
    },
    Sum(Var),
    Reshape(Var),
    SliceCols {
        x: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows {
        x: Var,
        index: Vec<usize>,
    },
    SegmentMax {
        x: Var,
        argmax: Vec<usize>,
    },
    BlendRows {
        x: Var,
        weights: Vec<Vec<(usize, f64)>>,
    },
    CanonAxisAngle {
        x: Var,
        scale: Vec<f64>,
        dscale: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    tracked: bool,
}

/// Layer-norm variance floor.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Recorded computation. One tape per forward pass; tapes share nothing.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dim_err(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

/// `big` shape is the output shape; `small` repeats along leading axes.
fn broadcast_ok(big: &[usize], small: &[usize]) -> bool {
    let trimmed: &[usize] = {
        let lead = small.iter().take_while(|&&d| d == 1).count();
        &small[lead..]
    };
    trimmed.len() <= big.len() && big.ends_with(trimmed)
}

fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: all strides address elements inside the given slices, whose
    // lengths are checked by the callers against (m, k, n).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a constant.
    pub fn constant(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = false;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a leaf whose gradient is populated by [`Tape::backward`].
    pub fn param(&mut self, mut value: Tensor) -> Var {
        value.requires_grad = true;
        value.grad = None;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            tracked: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records `value` as a leaf honoring its own `requires_grad` flag.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        if value.requires_grad {
            self.param(value)
        } else {
            self.constant(value)
        }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.value.grad = None;
        }
    }

    fn push(&mut self, op: Op, inputs: &[Var], shape: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation(format!(
                "{} produced a non-finite value at flat index {bad}",
                op_name(&op)
            )));
        }
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        let value = Tensor::from_parts(shape, data);
        self.nodes.push(Node {
            value,
            op: if tracked { op } else { Op::Leaf },
            tracked,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    // ── linear algebra ──────────────────────────────────────────────

    /// `C[i,j] = Σ_l A[i,l]·B[l,j]` for 2-D operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(dim_err("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), (k as isize, 1), tb.data(), (n as isize, 1), 0.0, &mut out);
        self.push(Op::Matmul(a, b), &[a, b], vec![m, n], out)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(Error::Dimension {
                op: "transpose",
                lhs: ta.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (r, c) = (ta.shape()[0], ta.shape()[1]);
        let src = ta.data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        self.push(Op::Transpose(a), &[a], vec![c, r], out)
    }

    /// `x·W + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add(y, b)
    }

    // ── pointwise ───────────────────────────────────────────────────

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Vec<usize>, Vec<f64>)> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
            return Ok((ta.shape().to_vec(), data));
        }
        if ta.len() >= tb.len() && broadcast_ok(ta.shape(), tb.shape()) {
            let m = tb.len();
            let bd = tb.data();
            let data = ta.data().iter().enumerate().map(|(i, &x)| f(x, bd[i % m])).collect();
            return Ok((ta.shape().to_vec(), data));
        }
        if tb.len() > ta.len() && broadcast_ok(tb.shape(), ta.shape()) {
            let m = ta.len();
            let ad = ta.data();
            let data = tb.data().iter().enumerate().map(|(i, &y)| f(ad[i % m], y)).collect();
            return Ok((tb.shape().to_vec(), data));
        }
        Err(dim_err(name, ta, tb))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(Op::Add(a, b), &[a, b], shape, data)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(Op::Sub(a, b), &[a, b], shape, data)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (shape, data) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(Op::Mul(a, b), &[a, b], shape, data)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| c * x).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Scale(a, c), &[a], shape, data)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.max(0.0)).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Relu(a), &[a], shape, data)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.tanh()).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Tanh(a), &[a], shape, data)
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| x.abs()).collect();
        let shape = t.shape().to_vec();
        self.push(Op::Abs(a), &[a], shape, data)
    }

    // ── normalization ───────────────────────────────────────────────

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let t = self.value(x);
        if axis >= t.rank() {
            return Err(Error::Dimension {
                op: "softmax",
                lhs: t.shape().to_vec(),
                rhs: vec![axis],
            });
        }
        let shape = t.shape().to_vec();
        let n = shape[axis];
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let src = t.data();
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * n + j) * inner + i;
                let max = (0..n).map(|j| src[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..n {
                    let e = (src[at(j)] - max).exp();
                    out[at(j)] = e;
                    total += e;
                }
                for j in 0..n {
                    out[at(j)] /= total;
                }
            }
        }
        self.push(Op::Softmax { x, outer, n, inner }, &[x], shape, out)
    }

    /// Row-wise normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (tx, tg, tb) = (self.value(x), self.value(gain), self.value(bias));
        let d = tx.cols();
        if d < 2 {
            return Err(Error::Dimension {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        if tg.len() != d || tb.len() != d {
            return Err(dim_err("layer_norm", tx, tg));
        }
        let rows = tx.rows();
        let mut xhat = vec![0.0; tx.len()];
        let mut out = vec![0.0; tx.len()];
        let mut inv_std = vec![0.0; rows];
        let mut floored = vec![false; rows];
        for r in 0..rows {
            let row = tx.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            floored[r] = var < LAYER_NORM_EPS;
            let s = 1.0 / var.max(LAYER_NORM_EPS).sqrt();
            inv_std[r] = s;
            for j in 0..d {
                let h = (row[j] - mean) * s;
                xhat[r * d + j] = h;
                out[r * d + j] = tg.data()[j] * h + tb.data()[j];
            }
        }
        let shape = tx.shape().to_vec();
        self.push(
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                floored,
            },
            &[x, gain, bias],
            shape,
            out,
        )
    }

    // ── reductions and reshaping ────────────────────────────────────

    /// Sum of all entries, as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), &[a], vec![1], vec![s])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len() as f64;
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let t = self.value(a);
        let n: usize = shape.iter().product();
        if n != t.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::Dimension {
                op: "reshape",
                lhs: t.shape().to_vec(),
                rhs: shape,
            });
        }
        let data = t.data().to_vec();
        self.push(Op::Reshape(a), &[a], shape, data)
    }

    /// Columns `start..start+len` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.rank() != 2 || len == 0 || start + len > t.shape()[1] {
            return Err(Error::Dimension {
                op: "slice_cols",
                lhs: t.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let rows = t.shape()[0];
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&t.row(r)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, &[x], vec![rows, len], out)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let rows = self.value(*first).rows();
        let mut cols = 0;
        for &p in parts {
            let t = self.value(p);
            if t.rank() != 2 || t.shape()[0] != rows {
                return Err(dim_err("concat_cols", self.value(*first), t));
            }
            cols += t.shape()[1];
        }
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        self.push(Op::ConcatCols(parts.to_vec()), parts, vec![rows, cols], out)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let cols = self.value(*first).cols();
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 2 || t.cols() != cols {
                return Err(dim_err("concat_rows", self.value(*first), t));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        self.push(Op::ConcatRows(parts.to_vec()), parts, vec![rows, cols], out)
    }

    /// Row `index[i]` of `x` becomes output row `i`; repeats allowed.
    pub fn gather_rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rows = t.rows();
        if index.is_empty() || index.iter().any(|&i| i >= rows) {
            return Err(Error::Dimension {
                op: "gather_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![index.len()],
            });
        }
        let cols = t.cols();
        let mut out = Vec::with_capacity(index.len() * cols);
        for &i in index {
            out.extend_from_slice(t.row(i));
        }
        self.push(
            Op::GatherRows {
                x,
                index: index.to_vec(),
            },
            &[x],
            vec![index.len(), cols],
            out,
        )
    }

    /// Column-wise max over consecutive row groups `offsets[g]..offsets[g+1]`.
    pub fn segment_max(&mut self, x: Var, offsets: &[usize]) -> Result<Var> {
        let t = self.value(x);
        let rows = t.rows();
        let bad = offsets.len() < 2
            || offsets[0] != 0
            || *offsets.last().unwrap() != rows
            || offsets.windows(2).any(|w| w[1] <= w[0]);
        if bad {
            return Err(Error::Dimension {
                op: "segment_max",
                lhs: t.shape().to_vec(),
                rhs: offsets.to_vec(),
            });
        }
        let cols = t.cols();
        let groups = offsets.len() - 1;
        let mut out = vec![f64::NEG_INFINITY; groups * cols];
        let mut argmax = vec![0usize; groups * cols];
        for g in 0..groups {
            for r in offsets[g]..offsets[g + 1] {
                let row = t.row(r);
                for j in 0..cols {
                    if row[j] > out[g * cols + j] {
                        out[g * cols + j] = row[j];
                        argmax[g * cols + j] = r;
                    }
                }
            }
        }
        self.push(Op::SegmentMax { x, argmax }, &[x], vec![groups, cols], out)
    }

    /// Convex combination of rows, evaluated as
    /// `x[j₀] + Σ_(k≥1) w_k·(x[j_k] − x[j₀])` so that a constant field is
    /// reproduced exactly. Each weight list must sum to 1.
    pub fn blend_rows(&mut self, x: Var, weights: &[Vec<(usize, f64)>]) -> Result<Var> {
        let t = self.value(x);
        let (rows, cols) = (t.rows(), t.cols());
        let bad = |w: &Vec<(usize, f64)>| {
            w.is_empty() || w.iter().any(|&(j, _)| j >= rows) || (w.iter().map(|&(_, v)| v).sum::<f64>() - 1.0).abs() > 1e-9
        };
        if weights.is_empty() || weights.iter().any(bad) {
            return Err(Error::Dimension {
                op: "blend_rows",
                lhs: t.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let mut out = vec![0.0; weights.len() * cols];
        let mut effective = Vec::with_capacity(weights.len());
        for (i, terms) in weights.iter().enumerate() {
            let dst = &mut out[i * cols..(i + 1) * cols];
            let a = terms[0].0;
            let base = t.row(a);
            dst.copy_from_slice(base);
            for &(j, w) in &terms[1..] {
                for ((o, v), b) in dst.iter_mut().zip(t.row(j)).zip(base) {
                    *o += w * (v - b);
                }
            }
            let rest: f64 = terms[1..].iter().map(|&(_, w)| w).sum();
            let mut e = vec![(a, 1.0 - rest)];
            e.extend_from_slice(&terms[1..]);
            effective.push(e);
        }
        self.push(Op::BlendRows { x, weights: effective }, &[x], vec![weights.len(), cols], out)
    }

    /// Wraps each axis-angle row (last axis of extent 3) to norm ≤ π.
    pub fn canon_axis_angle(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        if t.cols() != 3 {
            return Err(Error::Dimension {
                op: "canon_axis_angle",
                lhs: t.shape().to_vec(),
                rhs: vec![3],
            });
        }
        let rows = t.rows();
        let mut out = Vec::with_capacity(t.len());
        let mut scale = vec![1.0; rows];
        let mut dscale = vec![0.0; rows];
        for r in 0..rows {
            let v = t.row(r);
            let theta = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if theta > std::f64::consts::PI {
                let turns = (theta / std::f64::consts::TAU).round();
                let wrapped = theta - std::f64::consts::TAU * turns;
                scale[r] = wrapped / theta;
                dscale[r] = std::f64::consts::TAU * turns / (theta * theta);
                dscale[r] /= theta;
            }
            out.extend(v.iter().map(|c| c * scale[r]));
        }
        let shape = t.shape().to_vec();
        self.push(Op::CanonAxisAngle { x, scale, dscale }, &[x], shape, out)
    }

    // ── backward ────────────────────────────────────────────────────

    /// Accumulates `∂root/∂leaf` into every tracked leaf's `grad`.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar root, got shape {:?}",
                self.shape(root)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=root.0).map(|_| None).collect();
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].tracked {
                continue;
            }
            if matches!(self.nodes[i].op, Op::Leaf) {
                let slot = self.nodes[i].value.grad.get_or_insert_with(|| vec![0.0; g.len()]);
                for (s, v) in slot.iter_mut().zip(&g) {
                    *s += v;
                }
            } else {
                let node = &self.nodes[i];
                self.propagate(&node.op, &node.value, &g, &mut grads);
            }
        }
        Ok(())
    }

    fn propagate(&self, op: &Op, out: &Tensor, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !nodes[v.0].tracked {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]);
            f(slot);
        };
        let val = |v: Var| &nodes[v.0].value;

        match op {
            Op::Leaf => {}
            Op::Matmul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                acc(*a, &mut |s| {
                    // dA = dC·Bᵀ
                    gemm(m, n, k, g, (n as isize, 1), tb.data(), (1, n as isize), 1.0, s);
                });
                acc(*b, &mut |s| {
                    // dB = Aᵀ·dC
                    gemm(k, m, n, ta.data(), (1, k as isize), g, (n as isize, 1), 1.0, s);
                });
            }
            Op::Transpose(a) => {
                let (r, c) = (val(*a).shape()[0], val(*a).shape()[1]);
                acc(*a, &mut |s| {
                    for i in 0..r {
                        for j in 0..c {
                            s[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(op, Op::Sub(..)) { -1.0 } else { 1.0 };
                acc(*a, &mut |s| {
                    let m = s.len();
                    for (i, v) in g.iter().enumerate() {
                        s[i % m] += v;
                    }
                });
                acc(*b, &mut |s| {
                    let m = s.len();
                    for (i, v) in g.iter().enumerate() {
                        s[i % m] += sign * v;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (val(*a).data(), val(*b).data());
                acc(*a, &mut |s| {
                    let m = s.len();
                    let mb = bd.len();
                    for (i, v) in g.iter().enumerate() {
                        s[i % m] += v * bd[i % mb];
                    }
                });
                acc(*b, &mut |s| {
                    let m = s.len();
                    let ma = ad.len();
                    for (i, v) in g.iter().enumerate() {
                        s[i % m] += v * ad[i % ma];
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &mut |s| {
                for (s, v) in s.iter_mut().zip(g) {
                    *s += c * v;
                }
            }),
            Op::Relu(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        if x[i] > 0.0 {
                            s[i] += g[i];
                        }
                    }
                });
            }
            Op::Tanh(a) => {
                let y = out.data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        s[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            Op::Abs(a) => {
                let x = val(*a).data();
                acc(*a, &mut |s| {
                    for i in 0..s.len() {
                        // subgradient 0 at the origin
                        if x[i] > 0.0 {
                            s[i] += g[i];
                        } else if x[i] < 0.0 {
                            s[i] -= g[i];
                        }
                    }
                });
            }
            Op::Softmax { x, outer, n, inner } => {
                let y = out.data();
                let (outer, n, inner) = (*outer, *n, *inner);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |j: usize| (o * n + j) * inner + i;
                            let dot: f64 = (0..n).map(|j| g[at(j)] * y[at(j)]).sum();
                            for j in 0..n {
                                s[at(j)] += y[at(j)] * (g[at(j)] - dot);
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
                floored,
            } => {
                let d = out.cols();
                let rows = out.rows();
                let gd = val(*gain).data();
                acc(*gain, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j] * xhat[r * d + j];
                        }
                    }
                });
                acc(*bias, &mut |s| {
                    for r in 0..rows {
                        for j in 0..d {
                            s[j] += g[r * d + j];
                        }
                    }
                });
                acc(*x, &mut |s| {
                    let mut gh = vec![0.0; d];
                    for r in 0..rows {
                        for j in 0..d {
                            gh[j] = g[r * d + j] * gd[j];
                        }
                        let mean_gh = gh.iter().sum::<f64>() / d as f64;
                        let mean_ghx = if floored[r] {
                            0.0
                        } else {
                            (0..d).map(|j| gh[j] * xhat[r * d + j]).sum::<f64>() / d as f64
                        };
                        for j in 0..d {
                            s[r * d + j] += inv_std[r] * (gh[j] - mean_gh - xhat[r * d + j] * mean_ghx);
                        }
                    }
                });
            }
            Op::Sum(a) => acc(*a, &mut |s| {
                for v in s.iter_mut() {
                    *v += g[0];
                }
            }),
            Op::Reshape(a) => acc(*a, &mut |s| {
                for (s, v) in s.iter_mut().zip(g) {
                    *s += v;
                }
            }),
            Op::SliceCols { x, start } => {
                let cols = val(*x).cols();
                let len = out.cols();
                acc(*x, &mut |s| {
                    for r in 0..out.rows() {
                        for j in 0..len {
                            s[r * cols + start + j] += g[r * len + j];
                        }
                    }
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = val(*p).cols();
                    acc(*p, &mut |s| {
                        for r in 0..out.rows() {
                            for j in 0..c {
                                s[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    });
                    offset += c;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    acc(*p, &mut |s| {
                        for (s, v) in s.iter_mut().zip(&g[offset..offset + n]) {
                            *s += v;
                        }
                    });
                    offset += n;
                }
            }
            Op::GatherRows { x, index } => {
                let c = out.cols();
                acc(*x, &mut |s| {
                    for (r, &src) in index.iter().enumerate() {
                        for j in 0..c {
                            s[src * c + j] += g[r * c + j];
                        }
                    }
                });
            }
            Op::SegmentMax { x, argmax } => {
                let c = out.cols();
                acc(*x, &mut |s| {
                    for (k, &src) in argmax.iter().enumerate() {
                        s[src * c + k % c] += g[k];
                    }
                });
            }
            Op::BlendRows { x, weights } => {
                let c = out.cols();
                acc(*x, &mut |s| {
                    for (i, terms) in weights.iter().enumerate() {
                        for &(j, w) in terms {
                            for k in 0..c {
                                s[j * c + k] += w * g[i * c + k];
                            }
                        }
                    }
                });
            }
            Op::CanonAxisAngle { x, scale, dscale } => {
                let xd = val(*x).data();
                acc(*x, &mut |s| {
                    for r in 0..scale.len() {
                        let v = &xd[r * 3..r * 3 + 3];
                        let gr = &g[r * 3..r * 3 + 3];
                        let dot = v[0] * gr[0] + v[1] * gr[1] + v[2] * gr[2];
                        for j in 0..3 {
                            s[r * 3 + j] += scale[r] * gr[j] + dscale[r] * dot * v[j];
                        }
                    }
                });
            }
        }
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Matmul(..) => "matmul",
        Op::Transpose(..) => "transpose",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Scale(..) => "scale",
        Op::Relu(..) => "relu",
        Op::Tanh(..) => "tanh",
        Op::Abs(..) => "abs",
        Op::Softmax { .. } => "softmax",
        Op::LayerNorm { .. } => "layer_norm",
        Op::Sum(..) => "sum",
        Op::Reshape(..) => "reshape",
        Op::SliceCols { .. } => "slice_cols",
        Op::ConcatCols(..) => "concat_cols",
        Op::ConcatRows(..) => "concat_rows",
        Op::GatherRows { .. } => "gather_rows",
        Op::SegmentMax { .. } => "segment_max",
        Op::BlendRows { .. } => "blend_rows",
        Op::CanonAxisAngle { .. } => "canon_axis_angle",
    }
}
