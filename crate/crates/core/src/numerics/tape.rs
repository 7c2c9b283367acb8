//! Define-by-run reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and enough
//! state to run its local backward rule. [`Tape::backward`] walks the nodes
//! in exact reverse order of recording, so a node's gradient is complete
//! before it is pushed into its inputs.
//!
//! ```
//! use mian::numerics::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::vector(vec![1.0, 2.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
//! ```

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Variance floor inside the layer-norm square root.
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Lower clamp applied to probabilities before taking logs in [`Tape::bce`].
pub const PROB_CLAMP: f64 = 1e-12;

/// Handle to a value recorded on a [`Tape`].
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
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var, bool),
    Sub(Var, Var, bool),
    Mul(Var, Var, bool),
    Scale(Var, f64),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Map(Var, Vec<f64>),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Concat(Vec<Var>),
    ScaleRows(Var, Var),
    GateMix(Var, Var, Var),
    Sum(Var),
    Reshape(Var),
    Bce {
        y_hat: Var,
        target: f64,
        clamped: bool,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Recording of one forward pass. Rebuilt for every evaluation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
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

    /// Records a leaf; it receives a gradient iff `t.requires_grad`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let needs_grad = t.requires_grad;
        self.push(t, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, mut t: Tensor) -> Var {
        t.requires_grad = false;
        self.leaf(t)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.leaf(t.with_grad())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(Error::shape("matmul", ta.shape(), tb.shape()));
        }
        let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let out = matmul_raw(ta.data(), tb.data(), p, q, r);
        let ng = self.ng(&[a, b]);
        Ok(self.push(Tensor::from_parts(vec![p, r], out), Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.rank() != 2 {
            return Err(Error::shape("transpose", t.shape(), &[]));
        }
        let (p, q) = (t.shape()[0], t.shape()[1]);
        let out = transpose_raw(t.data(), p, q);
        let ng = self.ng(&[a]);
        Ok(self.push(Tensor::from_parts(vec![q, p], out), Op::Transpose(a), ng))
    }

    /// Either identical shapes, or a rank-2 `lhs` with a `[d]` / `[1, d]`
    /// right operand added to every row.
    fn broadcast(&self, op: &'static str, a: Var, b: Var) -> Result<bool> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() == tb.shape() {
            return Ok(false);
        }
        let row_vec = tb.rank() == 1 || (tb.rank() == 2 && tb.shape()[0] == 1);
        if ta.rank() == 2 && row_vec && tb.len() == ta.cols() {
            return Ok(true);
        }
        Err(Error::shape(op, ta.shape(), tb.shape()))
    }

    fn zip(&self, a: Var, b: Var, bc: bool, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        let d = ta.cols();
        let data = if bc {
            ta.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, tb.data()[i % d]))
                .collect()
        } else {
            ta.data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect()
        };
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("add", a, b)?;
        let out = self.zip(a, b, bc, |x, y| x + y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Add(a, b, bc), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("sub", a, b)?;
        let out = self.zip(a, b, bc, |x, y| x - y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b, bc), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let bc = self.broadcast("mul", a, b)?;
        let out = self.zip(a, b, bc, |x, y| x * y);
        let ng = self.ng(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b, bc), ng))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| scale * x + shift).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.ng(&[a]);
        self.push(out, Op::Scale(a, scale), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        let ng = self.ng(&[a]);
        self.push(out, op, ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    /// Elementwise `f` with a caller-supplied derivative `df`.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, df: impl Fn(f64) -> f64) -> Var {
        let deriv = self.value(a).data().iter().map(|&x| df(x)).collect();
        self.unary(a, f, Op::Map(a, deriv))
    }

    /// Row-wise softmax. `mask` is either one flag per column (shared by
    /// every row) or one per element; `false` entries are excluded and come
    /// out as exactly `0.0`.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let t = self.value(a);
        let (p, q) = (t.rows(), t.cols());
        let full = match mask {
            None => None,
            Some(m) if m.len() == q => Some(false),
            Some(m) if m.len() == p * q => Some(true),
            Some(m) => return Err(Error::shape("softmax_rows", t.shape(), &[m.len()])),
        };
        let keep = |r: usize, c: usize| match (mask, full) {
            (Some(m), Some(true)) => m[r * q + c],
            (Some(m), Some(false)) => m[c],
            _ => true,
        };
        let mut out = vec![0.0; p * q];
        for r in 0..p {
            let row = t.row(r);
            let mut max = f64::NEG_INFINITY;
            let mut kept = 0;
            for (c, &x) in row.iter().enumerate() {
                if keep(r, c) {
                    max = max.max(x);
                    kept += 1;
                }
            }
            if kept == 0 {
                return Err(Error::FullyMasked { row: r });
            }
            let mut sum = 0.0;
            for (c, &x) in row.iter().enumerate() {
                if keep(r, c) {
                    let e = (x - max).exp();
                    out[r * q + c] = e;
                    sum += e;
                }
            }
            for v in &mut out[r * q..(r + 1) * q] {
                *v /= sum;
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let ng = self.ng(&[a]);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    /// Per-row layer normalization followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let t = self.value(x);
        let d = t.cols();
        if t.rank() != 2 || d < 2 {
            return Err(Error::shape("layer_norm", t.shape(), &[]));
        }
        for v in [gain, bias] {
            if self.value(v).len() != d {
                return Err(Error::shape("layer_norm", t.shape(), self.value(v).shape()));
            }
        }
        let p = t.rows();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        let mut xhat = vec![0.0; p * d];
        let mut inv_std = vec![0.0; p];
        let mut out = vec![0.0; p * d];
        for r in 0..p {
            let row = t.row(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for c in 0..d {
                let h = (row[c] - mean) * is;
                xhat[r * d + c] = h;
                out[r * d + c] = g[c] * h + b[c];
            }
        }
        let out = Tensor::from_parts(t.shape().to_vec(), out);
        let ng = self.ng(&[x, gain, bias]);
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            ng,
        ))
    }

    /// Concatenates rank-2 tensors along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat", &[], &[]))?;
        let p = self.value(*first).rows();
        for v in parts {
            let t = self.value(*v);
            if t.rank() != 2 || t.rows() != p {
                return Err(Error::shape("concat", self.shape(*first), t.shape()));
            }
        }
        let total: usize = parts.iter().map(|v| self.value(*v).cols()).sum();
        let mut out = Vec::with_capacity(p * total);
        for r in 0..p {
            for v in parts {
                out.extend_from_slice(self.value(*v).row(r));
            }
        }
        let ng = self.ng(parts);
        let out = Tensor::from_parts(vec![p, total], out);
        Ok(self.push(out, Op::Concat(parts.to_vec()), ng))
    }

    pub fn concat_last_dim(&mut self, a: Var, b: Var) -> Result<Var> {
        self.concat_cols(&[a, b])
    }

    /// Multiplies row `i` of `x` by `w[i]`; `w` holds one entry per row.
    pub fn scale_rows(&mut self, x: Var, w: Var) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        if tx.rank() != 2 || tw.len() != tx.rows() {
            return Err(Error::shape("scale_rows", tx.shape(), tw.shape()));
        }
        let d = tx.cols();
        let data = tx
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v * tw.data()[i / d])
            .collect();
        let out = Tensor::from_parts(tx.shape().to_vec(), data);
        let ng = self.ng(&[x, w]);
        Ok(self.push(out, Op::ScaleRows(x, w), ng))
    }

    /// `gate ⊙ a + (1 − gate) ⊙ b`. The result is clamped into
    /// `[min(a, b), max(a, b)]` so rounding never leaves the segment; the
    /// backward rule is that of the unclamped expression.
    pub fn gate_mix(&mut self, gate: Var, a: Var, b: Var) -> Result<Var> {
        let (tg, ta, tb) = (self.value(gate), self.value(a), self.value(b));
        if tg.shape() != ta.shape() || ta.shape() != tb.shape() {
            return Err(Error::shape("gate_mix", ta.shape(), tb.shape()));
        }
        let data = tg
            .data()
            .iter()
            .zip(ta.data().iter().zip(tb.data()))
            .map(|(&g, (&x, &y))| between(g * x + (1.0 - g) * y, x, y))
            .collect();
        let out = Tensor::from_parts(ta.shape().to_vec(), data);
        let ng = self.ng(&[gate, a, b]);
        Ok(self.push(out, Op::GateMix(gate, a, b), ng))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let ng = self.ng(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        let ng = self.ng(&[a]);
        Ok(self.push(
            Tensor::from_parts(out.shape().to_vec(), out.into_data()),
            Op::Reshape(a),
            ng,
        ))
    }

    /// Binary cross-entropy of a single probability against a 0/1 target.
    /// The probability is clamped to `[PROB_CLAMP, 1 − PROB_CLAMP]`.
    pub fn bce(&mut self, y_hat: Var, target: f64) -> Result<Var> {
        let t = self.value(y_hat);
        if t.len() != 1 {
            return Err(Error::NotScalar(t.shape().to_vec()));
        }
        let raw = t.data()[0];
        let p = raw.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
        let loss = -target * p.ln() - (1.0 - target) * (1.0 - p).ln();
        let ng = self.ng(&[y_hat]);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::Bce {
                y_hat,
                target,
                clamped: p != raw,
            },
            ng,
        ))
    }

    /// Propagates d`loss`/d(node) to every node that needs a gradient.
    /// Fails on a non-scalar loss or on a second call before
    /// [`Tape::zero_grad`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NotScalar(lt.shape().to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.backward_node(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        for (node, g) in self.nodes.iter_mut().zip(&grads) {
            if matches!(node.op, Op::Leaf) && node.needs_grad {
                node.value.grad = g.clone();
            }
        }
        self.grads = grads;
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grads.clear();
        self.backward_done = false;
        for n in &mut self.nodes {
            n.value.grad = None;
        }
    }

    /// Gradient of the last backward pass with respect to `v`, if `v` was
    /// reachable from the loss.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    fn backward_node(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |v: Var| &nodes[v.0].value;
        let needs = |v: Var| nodes[v.0].needs_grad;
        let out = &nodes[id].value;
        match &nodes[id].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (p, q, r) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if needs(*a) {
                    // g (p×r) · bᵀ (r×q)
                    let bt = transpose_raw(tb.data(), q, r);
                    let ga = matmul_raw(g, &bt, p, r, q);
                    accumulate(grads, *a, ga.into_iter());
                }
                if needs(*b) {
                    // aᵀ (q×p) · g (p×r)
                    let at = transpose_raw(ta.data(), p, q);
                    let gb = matmul_raw(&at, g, q, p, r);
                    accumulate(grads, *b, gb.into_iter());
                }
            }
            Op::Transpose(a) => {
                let (p, q) = (out.shape()[0], out.shape()[1]);
                accumulate(grads, *a, transpose_raw(g, p, q).into_iter());
            }
            Op::Add(a, b, bc) | Op::Sub(a, b, bc) => {
                let sign = if matches!(nodes[id].op, Op::Sub(..)) {
                    -1.0
                } else {
                    1.0
                };
                if needs(*a) {
                    accumulate(grads, *a, g.iter().copied());
                }
                if needs(*b) {
                    if *bc {
                        let d = out.cols();
                        let mut gb = vec![0.0; d];
                        for (i, &x) in g.iter().enumerate() {
                            gb[i % d] += sign * x;
                        }
                        accumulate(grads, *b, gb.into_iter());
                    } else {
                        accumulate(grads, *b, g.iter().map(|x| sign * x));
                    }
                }
            }
            Op::Mul(a, b, bc) => {
                let (ta, tb) = (val(*a), val(*b));
                let d = out.cols();
                let bidx = |i: usize| if *bc { i % d } else { i };
                if needs(*a) {
                    let ga = g.iter().enumerate().map(|(i, &x)| x * tb.data()[bidx(i)]);
                    accumulate(grads, *a, ga);
                }
                if needs(*b) {
                    if *bc {
                        let mut gb = vec![0.0; d];
                        for (i, &x) in g.iter().enumerate() {
                            gb[i % d] += x * ta.data()[i];
                        }
                        accumulate(grads, *b, gb.into_iter());
                    } else {
                        accumulate(grads, *b, g.iter().zip(ta.data()).map(|(x, y)| x * y));
                    }
                }
            }
            Op::Scale(a, s) => accumulate(grads, *a, g.iter().map(|x| x * s)),
            Op::Relu(a) => {
                let ta = val(*a);
                let ga = g
                    .iter()
                    .zip(ta.data())
                    .map(|(&x, &v)| if v > 0.0 { x } else { 0.0 });
                accumulate(grads, *a, ga);
            }
            Op::Tanh(a) => {
                let ga = g.iter().zip(out.data()).map(|(x, y)| x * (1.0 - y * y));
                accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.iter().zip(out.data()).map(|(x, y)| x * y * (1.0 - y));
                accumulate(grads, *a, ga);
            }
            Op::Map(a, deriv) => {
                accumulate(grads, *a, g.iter().zip(deriv).map(|(x, d)| x * d));
            }
            Op::Softmax(a) => {
                let q = out.cols();
                let y = out.data();
                let mut ga = vec![0.0; y.len()];
                for r in 0..out.rows() {
                    let s = r * q..(r + 1) * q;
                    let dot: f64 = g[s.clone()]
                        .iter()
                        .zip(&y[s.clone()])
                        .map(|(a, b)| a * b)
                        .sum();
                    for i in s {
                        ga[i] = y[i] * (g[i] - dot);
                    }
                }
                accumulate(grads, *a, ga.into_iter());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let p = out.rows();
                let gv = val(*gain).data();
                if needs(*x) {
                    let mut gx = vec![0.0; p * d];
                    for r in 0..p {
                        let s = r * d..(r + 1) * d;
                        let dxh: Vec<f64> =
                            g[s.clone()].iter().zip(gv).map(|(a, b)| a * b).collect();
                        let m1 = dxh.iter().sum::<f64>() / d as f64;
                        let m2 = dxh
                            .iter()
                            .zip(&xhat[s.clone()])
                            .map(|(a, b)| a * b)
                            .sum::<f64>()
                            / d as f64;
                        for c in 0..d {
                            gx[r * d + c] = inv_std[r] * (dxh[c] - m1 - xhat[r * d + c] * m2);
                        }
                    }
                    accumulate(grads, *x, gx.into_iter());
                }
                if needs(*gain) {
                    let mut gg = vec![0.0; d];
                    for (i, (a, b)) in g.iter().zip(xhat).enumerate() {
                        gg[i % d] += a * b;
                    }
                    accumulate(grads, *gain, gg.into_iter());
                }
                if needs(*bias) {
                    let mut gb = vec![0.0; d];
                    for (i, a) in g.iter().enumerate() {
                        gb[i % d] += a;
                    }
                    accumulate(grads, *bias, gb.into_iter());
                }
            }
            Op::Concat(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for v in parts {
                    let c = val(*v).cols();
                    if needs(*v) {
                        let gv = (0..out.rows()).flat_map(|r| {
                            g[r * total + offset..r * total + offset + c]
                                .iter()
                                .copied()
                        });
                        accumulate(grads, *v, gv);
                    }
                    offset += c;
                }
            }
            Op::ScaleRows(x, w) => {
                let (tx, tw) = (val(*x), val(*w));
                let d = tx.cols();
                if needs(*x) {
                    let gx = g.iter().enumerate().map(|(i, a)| a * tw.data()[i / d]);
                    accumulate(grads, *x, gx);
                }
                if needs(*w) {
                    let mut gw = vec![0.0; tw.len()];
                    for (i, (a, b)) in g.iter().zip(tx.data()).enumerate() {
                        gw[i / d] += a * b;
                    }
                    accumulate(grads, *w, gw.into_iter());
                }
            }
            Op::GateMix(gate, a, b) => {
                let (tg, ta, tb) = (val(*gate).data(), val(*a).data(), val(*b).data());
                if needs(*gate) {
                    let gg = (0..g.len()).map(|i| g[i] * (ta[i] - tb[i]));
                    accumulate(grads, *gate, gg);
                }
                if needs(*a) {
                    accumulate(grads, *a, g.iter().zip(tg).map(|(x, s)| x * s));
                }
                if needs(*b) {
                    accumulate(grads, *b, g.iter().zip(tg).map(|(x, s)| x * (1.0 - s)));
                }
            }
            Op::Sum(a) => {
                let n = val(*a).len();
                accumulate(grads, *a, std::iter::repeat_n(g[0], n));
            }
            Op::Reshape(a) => accumulate(grads, *a, g.iter().copied()),
            Op::Bce {
                y_hat,
                target,
                clamped,
            } => {
                let p = val(*y_hat).data()[0];
                let d = if *clamped {
                    0.0
                } else {
                    -target / p + (1.0 - target) / (1.0 - p)
                };
                accumulate(grads, *y_hat, std::iter::once(g[0] * d));
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, c) in existing.iter_mut().zip(contrib) {
                *e += c;
            }
        }
        slot @ None => *slot = Some(contrib.collect()),
    }
}

/// `v` limited to the closed interval spanned by `x` and `y`; NaN passes
/// through.
fn between(v: f64, x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if v < lo {
        lo
    } else if v > hi {
        hi
    } else {
        v
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `a (p×q) · b (q×r)`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        let orow = &mut out[i * r..(i + 1) * r];
        for k in 0..q {
            let aik = a[i * q + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * r..(k + 1) * r];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

pub(crate) fn transpose_raw(a: &[f64], p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * q];
    for i in 0..p {
        for j in 0..q {
            out[j * p + i] = a[i * q + j];
        }
    }
    out
}
