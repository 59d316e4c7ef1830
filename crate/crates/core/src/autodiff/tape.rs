//! Wengert tape over dense tensors.
//!
//! Every node is evaluated eagerly when recorded. VJP rules are themselves
//! written with tape operations, so the result of [`Tape::vjp`] lives on the
//! same tape and can be differentiated again.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::gelu::gelu_derivative;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    /// Values are rounded to 32-bit floats after every operation.
    F32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolMode {
    Average,
    Max,
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Shift(usize, f64),
    Square(usize),
    Sqrt(usize),
    Log(usize),
    Exp(usize),
    ClampStop { a: usize, lo: f64, hi: f64 },
    ClampMask { a: usize, lo: f64, hi: f64 },
    Relu(usize),
    ReluMask(usize),
    Gelu { a: usize, order: u32 },
    MatMul(usize, usize),
    Transpose(usize),
    SumAll(usize),
    BroadcastScalar { a: usize, shape: Vec<usize> },
    SumAxis { a: usize, axis: usize },
    BroadcastAxis { a: usize, axis: usize, n: usize },
    PoolApply { x: usize, reference: usize, window: usize, mode: PoolMode },
    PoolSpread { g: usize, reference: usize, window: usize, mode: PoolMode },
    GatherRows { a: usize, index: Arc<[Option<usize>]> },
    ScatterRows { a: usize, index: Arc<[Option<usize>]>, rows: usize },
    SliceCols { a: usize, start: usize, end: usize },
    PadCols { a: usize, start: usize, total: usize },
    Reshape { a: usize, shape: Vec<usize> },
    RowMaxDetached(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::Shift(..) => "shift",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Log(_) => "log",
            Op::Exp(_) => "exp",
            Op::ClampStop { .. } => "clamp_stop",
            Op::ClampMask { .. } => "clamp_mask",
            Op::Relu(_) => "relu",
            Op::ReluMask(_) => "relu_mask",
            Op::Gelu { .. } => "gelu",
            Op::MatMul(..) => "matmul",
            Op::Transpose(_) => "transpose",
            Op::SumAll(_) => "sum",
            Op::BroadcastScalar { .. } => "broadcast_scalar",
            Op::SumAxis { .. } => "sum_axis",
            Op::BroadcastAxis { .. } => "broadcast_axis",
            Op::PoolApply { .. } => "pool",
            Op::PoolSpread { .. } => "pool_spread",
            Op::GatherRows { .. } => "gather_rows",
            Op::ScatterRows { .. } => "scatter_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::PadCols { .. } => "pad_cols",
            Op::Reshape { .. } => "reshape",
            Op::RowMaxDetached(_) => "row_max",
        }
    }

    fn inputs(&self) -> Vec<usize> {
        match *self {
            Op::Input => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::MatMul(a, b) => {
                vec![a, b]
            }
            Op::PoolApply { x, reference, .. } => vec![x, reference],
            Op::PoolSpread { g, reference, .. } => vec![g, reference],
            Op::Neg(a)
            | Op::Scale(a, _)
            | Op::Shift(a, _)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Log(a)
            | Op::Exp(a)
            | Op::ClampStop { a, .. }
            | Op::ClampMask { a, .. }
            | Op::Relu(a)
            | Op::ReluMask(a)
            | Op::Gelu { a, .. }
            | Op::Transpose(a)
            | Op::SumAll(a)
            | Op::BroadcastScalar { a, .. }
            | Op::SumAxis { a, .. }
            | Op::BroadcastAxis { a, .. }
            | Op::GatherRows { a, .. }
            | Op::ScatterRows { a, .. }
            | Op::SliceCols { a, .. }
            | Op::PadCols { a, .. }
            | Op::Reshape { a, .. }
            | Op::RowMaxDetached(a) => vec![a],
        }
    }
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    ops: Vec<Op>,
    values: Vec<Tensor>,
    precision: Precision,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape { precision, ..Self::default() }
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.values[v.0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.values[v.0].shape()
    }

    /// Ids of the nodes feeding `v`.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.ops[v.0].inputs().into_iter().map(Var).collect()
    }

    /// Records an input node. Inputs can be differentiated against and
    /// substituted in [`Tape::forward`].
    pub fn input(&mut self, value: Tensor) -> Var {
        let value = self.round(value);
        self.ops.push(Op::Input);
        self.values.push(value);
        Var(self.ops.len() - 1)
    }

    /// Alias of [`Tape::input`] for values that are never differentiated.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.input(value)
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.input(Tensor::scalar(x))
    }

    fn round(&self, t: Tensor) -> Tensor {
        match self.precision {
            Precision::F64 => t,
            Precision::F32 => t.map(|x| x as f32 as f64),
        }
    }

    fn push(&mut self, op: Op) -> Result<Var> {
        let value = self.round(eval(&op, &self.values)?);
        let id = self.ops.len();
        if !value.all_finite() {
            return Err(Error::NonFinite { node: id, op: op.name() });
        }
        self.ops.push(op);
        self.values.push(value);
        Ok(Var(id))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::Div(a.0, b.0))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Neg(a.0))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Scale(a.0, c))
    }

    /// `a + c` elementwise.
    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        self.push(Op::Shift(a.0, c))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Square(a.0))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Sqrt(a.0))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Log(a.0))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Exp(a.0))
    }

    /// Clamp into `[lo, hi]`; the gradient is zero wherever the clamp is active.
    pub fn clamp_stop(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        self.push(Op::ClampStop { a: a.0, lo, hi })
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Relu(a.0))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Gelu { a: a.0, order: 0 })
    }

    /// k-th derivative of GELU, applied elementwise.
    pub fn gelu_derivative(&mut self, a: Var, order: u32) -> Result<Var> {
        self.push(Op::Gelu { a: a.0, order })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.push(Op::MatMul(a.0, b.0))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        self.push(Op::Transpose(a.0))
    }

    /// Sum of all elements, as a rank-0 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        self.push(Op::SumAll(a.0))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.values[a.0].len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum of `a * b` over all elements.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Broadcast a one-element tensor to `shape`.
    pub fn broadcast_scalar(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::BroadcastScalar { a: a.0, shape: shape.to_vec() })
    }

    /// Matrix reduction: axis 0 sums over rows (`[r, c] -> [c]`), axis 1 over
    /// columns (`[r, c] -> [r]`).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.push(Op::SumAxis { a: a.0, axis })
    }

    /// Inverse of [`Tape::sum_axis`]: axis 0 repeats a `[c]` vector as `n`
    /// rows, axis 1 repeats a `[r]` vector as `n` columns.
    pub fn broadcast_axis(&mut self, a: Var, axis: usize, n: usize) -> Result<Var> {
        self.push(Op::BroadcastAxis { a: a.0, axis, n })
    }

    /// Non-overlapping pooling along the columns of a matrix.
    pub fn pool(&mut self, x: Var, window: usize, mode: PoolMode) -> Result<Var> {
        self.push(Op::PoolApply { x: x.0, reference: x.0, window, mode })
    }

    pub fn avg_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        self.pool(x, window, PoolMode::Average)
    }

    pub fn max_pool(&mut self, x: Var, window: usize) -> Result<Var> {
        self.pool(x, window, PoolMode::Max)
    }

    /// Rows of `a` selected by `index`; `None` yields a zero row.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[Option<usize>]>) -> Result<Var> {
        self.push(Op::GatherRows { a: a.0, index })
    }

    /// Adjoint of [`Tape::gather_rows`]: accumulates rows of `a` into a
    /// `rows`-row matrix.
    pub fn scatter_rows(&mut self, a: Var, index: Arc<[Option<usize>]>, rows: usize) -> Result<Var> {
        self.push(Op::ScatterRows { a: a.0, index, rows })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        self.push(Op::SliceCols { a: a.0, start, end })
    }

    pub fn pad_cols(&mut self, a: Var, start: usize, total: usize) -> Result<Var> {
        self.push(Op::PadCols { a: a.0, start, total })
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        self.push(Op::Reshape { a: a.0, shape: shape.to_vec() })
    }

    /// Row maxima, treated as a constant by differentiation.
    pub fn row_max_detached(&mut self, a: Var) -> Result<Var> {
        self.push(Op::RowMaxDetached(a.0))
    }

    /// Batch-statistics normalization of a `[b, f]` matrix per feature,
    /// followed by the affine map `gamma * y + beta`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (b, _) = self.values[x.0].dims2().ok_or_else(|| Error::shape("batch_norm", "expects a matrix"))?;
        if eps <= 0.0 {
            return Err(Error::config("batch_norm eps must be > 0"));
        }
        let inv_b = 1.0 / b as f64;
        let s = self.sum_axis(x, 0)?;
        let mean = self.scale(s, inv_b)?;
        let mean_b = self.broadcast_axis(mean, 0, b)?;
        let centered = self.sub(x, mean_b)?;
        let sq = self.square(centered)?;
        let ss = self.sum_axis(sq, 0)?;
        let var = self.scale(ss, inv_b)?;
        let var_eps = self.add_scalar(var, eps)?;
        let std = self.sqrt(var_eps)?;
        let std_b = self.broadcast_axis(std, 0, b)?;
        let normed = self.div(centered, std_b)?;
        let g = self.broadcast_axis(gamma, 0, b)?;
        let scaled = self.mul(normed, g)?;
        let beta_b = self.broadcast_axis(beta, 0, b)?;
        self.add(scaled, beta_b)
    }

    /// Per-row softmax cross-entropy `lse(x) * sum(y) - <y, x>` against
    /// (possibly soft) targets; returns a `[b]` vector.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: Var) -> Result<Var> {
        let (_, c) =
            self.values[logits.0].dims2().ok_or_else(|| Error::shape("softmax_cross_entropy", "expects a matrix"))?;
        let m = self.row_max_detached(logits)?;
        let m_b = self.broadcast_axis(m, 1, c)?;
        let shifted = self.sub(logits, m_b)?;
        let e = self.exp(shifted)?;
        let se = self.sum_axis(e, 1)?;
        let lse = self.log(se)?;
        let mass = self.sum_axis(targets, 1)?;
        let lse_mass = self.mul(lse, mass)?;
        let yx = self.mul(targets, shifted)?;
        let fit = self.sum_axis(yx, 1)?;
        self.sub(lse_mass, fit)
    }

    /// Vector-Jacobian product of `outputs` against `wrt`, recorded on this
    /// tape so it can be differentiated again.
    ///
    /// Returns `d <cotangents, outputs> / d wrt`; inputs unreachable from the
    /// outputs get zero tensors.
    pub fn vjp(&mut self, outputs: &[Var], cotangents: &[Var], wrt: &[Var]) -> Result<Vec<Var>> {
        if outputs.len() != cotangents.len() {
            return Err(Error::shape("vjp", "one cotangent per output required"));
        }
        for (o, c) in outputs.iter().zip(cotangents) {
            if self.values[o.0].shape() != self.values[c.0].shape() {
                return Err(Error::shape(
                    "vjp",
                    format!("cotangent {:?} for output {:?}", self.values[c.0].shape(), self.values[o.0].shape()),
                ));
            }
        }
        let Some(top) = outputs.iter().map(|o| o.0).max() else {
            return Ok(wrt.iter().map(|w| self.zeros_like(*w)).collect());
        };
        let mut needed = vec![false; top + 1];
        for w in wrt {
            if w.0 <= top {
                needed[w.0] = true;
            }
        }
        for j in 0..=top {
            if !needed[j] && self.ops[j].inputs().iter().any(|&i| needed[i]) {
                needed[j] = true;
            }
        }
        let mut adj: Vec<Option<usize>> = vec![None; top + 1];
        for (o, c) in outputs.iter().zip(cotangents) {
            if needed[o.0] {
                adj[o.0] = Some(self.accumulate(adj[o.0], c.0)?);
            }
        }
        for j in (0..=top).rev() {
            let Some(g) = adj[j] else { continue };
            if !needed[j] {
                continue;
            }
            let op = self.ops[j].clone();
            for (i, contrib) in self.rule(j, &op, g, &needed)? {
                adj[i] = Some(self.accumulate(adj[i], contrib)?);
            }
        }
        Ok(wrt
            .iter()
            .map(|w| match adj.get(w.0).copied().flatten() {
                Some(g) => Var(g),
                None => self.zeros_like(*w),
            })
            .collect())
    }

    fn zeros_like(&mut self, v: Var) -> Var {
        let shape = self.values[v.0].shape().to_vec();
        self.constant(Tensor::zeros(&shape))
    }

    fn accumulate(&mut self, acc: Option<usize>, g: usize) -> Result<usize> {
        match acc {
            None => Ok(g),
            Some(a) => Ok(self.add(Var(a), Var(g))?.0),
        }
    }

    // The VJP rule of every op, expressed with tape ops.
    fn rule(&mut self, out: usize, op: &Op, g: usize, needed: &[bool]) -> Result<Vec<(usize, usize)>> {
        let g = Var(g);
        let out = Var(out);
        let mut res = Vec::with_capacity(2);
        let want = |i: usize| needed[i];
        match *op {
            Op::Input | Op::ClampMask { .. } | Op::ReluMask(_) | Op::RowMaxDetached(_) => {}
            Op::Add(a, b) => {
                if want(a) {
                    res.push((a, g.0));
                }
                if want(b) {
                    res.push((b, g.0));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    res.push((a, g.0));
                }
                if want(b) {
                    res.push((b, self.neg(g)?.0));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    res.push((a, self.mul(g, Var(b))?.0));
                }
                if want(b) {
                    res.push((b, self.mul(g, Var(a))?.0));
                }
            }
            Op::Div(a, b) => {
                if want(a) {
                    res.push((a, self.div(g, Var(b))?.0));
                }
                if want(b) {
                    let go = self.mul(g, out)?;
                    let q = self.div(go, Var(b))?;
                    res.push((b, self.neg(q)?.0));
                }
            }
            Op::Neg(a) => res.push((a, self.neg(g)?.0)),
            Op::Scale(a, c) => res.push((a, self.scale(g, c)?.0)),
            Op::Shift(a, _) => res.push((a, g.0)),
            Op::Square(a) => {
                let ga = self.mul(g, Var(a))?;
                res.push((a, self.scale(ga, 2.0)?.0));
            }
            Op::Sqrt(a) => {
                let two_out = self.scale(out, 2.0)?;
                res.push((a, self.div(g, two_out)?.0));
            }
            Op::Log(a) => res.push((a, self.div(g, Var(a))?.0)),
            Op::Exp(a) => res.push((a, self.mul(g, out)?.0)),
            Op::ClampStop { a, lo, hi } => {
                let m = self.push(Op::ClampMask { a, lo, hi })?;
                res.push((a, self.mul(g, m)?.0));
            }
            Op::Relu(a) => {
                let m = self.push(Op::ReluMask(a))?;
                res.push((a, self.mul(g, m)?.0));
            }
            Op::Gelu { a, order } => {
                let d = self.gelu_derivative(Var(a), order + 1)?;
                res.push((a, self.mul(g, d)?.0));
            }
            Op::MatMul(a, b) => {
                if want(a) {
                    let bt = self.transpose(Var(b))?;
                    res.push((a, self.matmul(g, bt)?.0));
                }
                if want(b) {
                    let at = self.transpose(Var(a))?;
                    res.push((b, self.matmul(at, g)?.0));
                }
            }
            Op::Transpose(a) => res.push((a, self.transpose(g)?.0)),
            Op::SumAll(a) => {
                let shape = self.values[a].shape().to_vec();
                res.push((a, self.broadcast_scalar(g, &shape)?.0));
            }
            Op::BroadcastScalar { a, .. } => {
                let s = self.sum(g)?;
                let shape = self.values[a].shape().to_vec();
                let s = if shape.is_empty() { s } else { self.reshape(s, &shape)? };
                res.push((a, s.0));
            }
            Op::SumAxis { a, axis } => {
                let n = self.values[a].shape()[axis];
                res.push((a, self.broadcast_axis(g, axis, n)?.0));
            }
            Op::BroadcastAxis { a, axis, .. } => res.push((a, self.sum_axis(g, axis)?.0)),
            Op::PoolApply { x, reference, window, mode } => {
                if want(x) {
                    let s = self.push(Op::PoolSpread { g: g.0, reference, window, mode })?;
                    res.push((x, s.0));
                }
            }
            Op::PoolSpread { g: src, reference, window, mode } => {
                if want(src) {
                    let p = self.push(Op::PoolApply { x: g.0, reference, window, mode })?;
                    res.push((src, p.0));
                }
            }
            Op::GatherRows { a, ref index } => {
                let rows = self.values[a].shape()[0];
                res.push((a, self.scatter_rows(g, index.clone(), rows)?.0));
            }
            Op::ScatterRows { a, ref index, .. } => {
                res.push((a, self.gather_rows(g, index.clone())?.0));
            }
            Op::SliceCols { a, start, .. } => {
                let total = self.values[a].shape()[1];
                res.push((a, self.pad_cols(g, start, total)?.0));
            }
            Op::PadCols { a, start, .. } => {
                let w = self.values[a].shape()[1];
                res.push((a, self.slice_cols(g, start, start + w)?.0));
            }
            Op::Reshape { a, .. } => {
                let shape = self.values[a].shape().to_vec();
                res.push((a, self.reshape(g, &shape)?.0));
            }
        }
        Ok(res)
    }

    /// Re-evaluates the recorded graph with some inputs replaced, returning
    /// the values of `outputs`. The tape itself is left untouched.
    pub fn forward(&self, inputs: &[(Var, Tensor)], outputs: &[Var]) -> Result<Vec<Tensor>> {
        let top = outputs.iter().map(|o| o.0).max().map_or(0, |t| t + 1);
        let mut values: Vec<Tensor> = Vec::with_capacity(top);
        for j in 0..top {
            let v = match &self.ops[j] {
                Op::Input => match inputs.iter().find(|(v, _)| v.0 == j) {
                    Some((_, t)) => {
                        if t.shape() != self.values[j].shape() {
                            return Err(Error::shape(
                                "forward",
                                format!("input {j}: {:?} vs {:?}", t.shape(), self.values[j].shape()),
                            ));
                        }
                        self.round(t.clone())
                    }
                    None => self.values[j].clone(),
                },
                op => {
                    let v = self.round(eval(op, &values)?);
                    if !v.all_finite() {
                        return Err(Error::NonFinite { node: j, op: op.name() });
                    }
                    v
                }
            };
            values.push(v);
        }
        Ok(outputs.iter().map(|o| values[o.0].clone()).collect())
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| Error::shape(op, format!("expects a matrix, got {:?}", t.shape())))
}

fn binary(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    same_shape(op, a, b)?;
    a.zip_map(b, f)
}

// Pool weight for column `i` of row `row` in `reference`.
fn pool_selector(reference: &Tensor, window: usize, mode: PoolMode) -> Result<Vec<usize>> {
    let (r, c) = matrix("pool", reference)?;
    if window == 0 || c % window != 0 {
        return Err(Error::shape("pool", format!("window {window} does not divide {c} columns")));
    }
    if mode == PoolMode::Average {
        return Ok(Vec::new());
    }
    let d = reference.data();
    let mut argmax = Vec::with_capacity(r * (c / window));
    for row in 0..r {
        for j in 0..c / window {
            let base = row * c + j * window;
            let mut best = 0;
            for k in 1..window {
                if d[base + k] > d[base + best] {
                    best = k;
                }
            }
            argmax.push(best);
        }
    }
    Ok(argmax)
}

fn eval(op: &Op, v: &[Tensor]) -> Result<Tensor> {
    Ok(match *op {
        Op::Input => unreachable!("inputs carry their own value"),
        Op::Add(a, b) => binary("add", &v[a], &v[b], |x, y| x + y)?,
        Op::Sub(a, b) => binary("sub", &v[a], &v[b], |x, y| x - y)?,
        Op::Mul(a, b) => binary("mul", &v[a], &v[b], |x, y| x * y)?,
        Op::Div(a, b) => binary("div", &v[a], &v[b], |x, y| x / y)?,
        Op::Neg(a) => v[a].map(|x| -x),
        Op::Scale(a, c) => v[a].map(|x| c * x),
        Op::Shift(a, c) => v[a].map(|x| x + c),
        Op::Square(a) => v[a].map(|x| x * x),
        Op::Sqrt(a) => v[a].map(f64::sqrt),
        Op::Log(a) => v[a].map(f64::ln),
        Op::Exp(a) => v[a].map(f64::exp),
        Op::ClampStop { a, lo, hi } => v[a].map(|x| x.clamp(lo, hi)),
        Op::ClampMask { a, lo, hi } => v[a].map(|x| if x > lo && x < hi { 1.0 } else { 0.0 }),
        Op::Relu(a) => v[a].map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::ReluMask(a) => v[a].map(|x| if x > 0.0 { 1.0 } else { 0.0 }),
        Op::Gelu { a, order } => v[a].map(|x| gelu_derivative(x, order)),
        Op::MatMul(a, b) => {
            let (m, k) = matrix("matmul", &v[a])?;
            let (k2, n) = matrix("matmul", &v[b])?;
            if k != k2 {
                return Err(Error::shape("matmul", format!("[{m},{k}] x [{k2},{n}]")));
            }
            let (ad, bd) = (v[a].data(), v[b].data());
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = ad[i * k + p];
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, &bv) in orow.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            Tensor::new(vec![m, n], out)?
        }
        Op::Transpose(a) => {
            let (r, c) = matrix("transpose", &v[a])?;
            let d = v[a].data();
            let mut out = vec![0.0; r * c];
            for i in 0..r {
                for j in 0..c {
                    out[j * r + i] = d[i * c + j];
                }
            }
            Tensor::new(vec![c, r], out)?
        }
        Op::SumAll(a) => Tensor::scalar(v[a].sum()),
        Op::BroadcastScalar { a, ref shape } => {
            if v[a].len() != 1 {
                return Err(Error::shape("broadcast_scalar", format!("{:?}", v[a].shape())));
            }
            Tensor::full(shape, v[a].data()[0])
        }
        Op::SumAxis { a, axis } => {
            let (r, c) = matrix("sum_axis", &v[a])?;
            let d = v[a].data();
            match axis {
                0 => {
                    let mut out = vec![0.0; c];
                    for i in 0..r {
                        for (o, &x) in out.iter_mut().zip(&d[i * c..(i + 1) * c]) {
                            *o += x;
                        }
                    }
                    Tensor::vector(out)
                }
                1 => Tensor::vector((0..r).map(|i| d[i * c..(i + 1) * c].iter().fold(0.0, |s, &x| s + x)).collect()),
                _ => return Err(Error::shape("sum_axis", format!("axis {axis}"))),
            }
        }
        Op::BroadcastAxis { a, axis, n } => {
            if v[a].rank() != 1 {
                return Err(Error::shape("broadcast_axis", format!("{:?}", v[a].shape())));
            }
            let d = v[a].data();
            let len = d.len();
            match axis {
                0 => {
                    let mut out = Vec::with_capacity(n * len);
                    for _ in 0..n {
                        out.extend_from_slice(d);
                    }
                    Tensor::new(vec![n, len], out)?
                }
                1 => {
                    let mut out = Vec::with_capacity(n * len);
                    for &x in d {
                        out.extend(std::iter::repeat_n(x, n));
                    }
                    Tensor::new(vec![len, n], out)?
                }
                _ => return Err(Error::shape("broadcast_axis", format!("axis {axis}"))),
            }
        }
        Op::PoolApply { x, reference, window, mode } => {
            same_shape("pool", &v[x], &v[reference])?;
            let sel = pool_selector(&v[reference], window, mode)?;
            let (r, c) = matrix("pool", &v[x])?;
            let cols = c / window;
            let d = v[x].data();
            let mut out = vec![0.0; r * cols];
            for row in 0..r {
                for j in 0..cols {
                    let base = row * c + j * window;
                    out[row * cols + j] = match mode {
                        PoolMode::Average => d[base..base + window].iter().fold(0.0, |s, &x| s + x) / window as f64,
                        PoolMode::Max => d[base + sel[row * cols + j]],
                    };
                }
            }
            Tensor::new(vec![r, cols], out)?
        }
        Op::PoolSpread { g, reference, window, mode } => {
            let sel = pool_selector(&v[reference], window, mode)?;
            let (r, c) = matrix("pool_spread", &v[reference])?;
            let cols = c / window;
            if v[g].shape() != [r, cols] {
                return Err(Error::shape("pool_spread", format!("{:?}", v[g].shape())));
            }
            let gd = v[g].data();
            let mut out = vec![0.0; r * c];
            for row in 0..r {
                for j in 0..cols {
                    let gv = gd[row * cols + j];
                    let base = row * c + j * window;
                    match mode {
                        PoolMode::Average => {
                            for o in &mut out[base..base + window] {
                                *o = gv / window as f64;
                            }
                        }
                        PoolMode::Max => out[base + sel[row * cols + j]] = gv,
                    }
                }
            }
            Tensor::new(vec![r, c], out)?
        }
        Op::GatherRows { a, ref index } => {
            let (rows, c) = matrix("gather_rows", &v[a])?;
            let d = v[a].data();
            let mut out = vec![0.0; index.len() * c];
            for (p, ix) in index.iter().enumerate() {
                if let Some(i) = *ix {
                    if i >= rows {
                        return Err(Error::shape("gather_rows", format!("row {i} of {rows}")));
                    }
                    out[p * c..(p + 1) * c].copy_from_slice(&d[i * c..(i + 1) * c]);
                }
            }
            Tensor::new(vec![index.len(), c], out)?
        }
        Op::ScatterRows { a, ref index, rows } => {
            let (m, c) = matrix("scatter_rows", &v[a])?;
            if m != index.len() {
                return Err(Error::shape("scatter_rows", format!("{m} rows, {} indices", index.len())));
            }
            let d = v[a].data();
            let mut out = vec![0.0; rows * c];
            for (p, ix) in index.iter().enumerate() {
                if let Some(i) = *ix {
                    if i >= rows {
                        return Err(Error::shape("scatter_rows", format!("row {i} of {rows}")));
                    }
                    for (o, &x) in out[i * c..(i + 1) * c].iter_mut().zip(&d[p * c..(p + 1) * c]) {
                        *o += x;
                    }
                }
            }
            Tensor::new(vec![rows, c], out)?
        }
        Op::SliceCols { a, start, end } => {
            let (r, c) = matrix("slice_cols", &v[a])?;
            if start > end || end > c {
                return Err(Error::shape("slice_cols", format!("{start}..{end} of {c}")));
            }
            let d = v[a].data();
            let w = end - start;
            let mut out = Vec::with_capacity(r * w);
            for i in 0..r {
                out.extend_from_slice(&d[i * c + start..i * c + end]);
            }
            Tensor::new(vec![r, w], out)?
        }
        Op::PadCols { a, start, total } => {
            let (r, w) = matrix("pad_cols", &v[a])?;
            if start + w > total {
                return Err(Error::shape("pad_cols", format!("{start}+{w} > {total}")));
            }
            let d = v[a].data();
            let mut out = vec![0.0; r * total];
            for i in 0..r {
                out[i * total + start..i * total + start + w].copy_from_slice(&d[i * w..(i + 1) * w]);
            }
            Tensor::new(vec![r, total], out)?
        }
        Op::Reshape { a, ref shape } => v[a].clone().reshape(shape.clone())?,
        Op::RowMaxDetached(a) => {
            let (r, c) = matrix("row_max", &v[a])?;
            let d = v[a].data();
            Tensor::vector(
                (0..r).map(|i| d[i * c..(i + 1) * c].iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))).collect(),
            )
        }
    })
}
