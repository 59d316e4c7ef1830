//! Scalar test functions exercising every differentiable tape primitive.

use std::sync::Arc;

use metagrad::autodiff::{PoolMode, Tape, Var};
use metagrad::{Result, Tensor};

pub type Builder = fn(&mut Tape, Var) -> Result<Var>;

/// `sum(w * y)` with fixed, non-symmetric weights.
fn weighted(t: &mut Tape, y: Var) -> Result<Var> {
    let n = t.value(y).len();
    let shape = t.shape(y).to_vec();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + (0.9 * i as f64 + 0.4).sin()).collect())?;
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    t.sum(p)
}

/// Values in `[0.55, 1.45]`, at least 0.1 away from 1 and with adjacent
/// entries on opposite sides of it.
pub fn point(rows: usize, cols: usize) -> Tensor {
    let data = (0..rows * cols)
        .map(|i| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            1.0 + side * (0.1 + 0.35 * ((i * 7 % 11) as f64 / 11.0))
        })
        .collect();
    Tensor::new(vec![rows, cols], data).unwrap()
}

fn halves(t: &mut Tape, x: Var) -> Result<(Var, Var)> {
    let c = t.shape(x)[1];
    let a = t.slice_cols(x, 0, c / 2)?;
    let b = t.slice_cols(x, c / 2, c)?;
    Ok((a, b))
}

macro_rules! unary {
    ($t:ident, $x:ident, $body:expr) => {{
        fn f($t: &mut Tape, $x: Var) -> Result<Var> {
            let y = $body;
            weighted($t, y)
        }
        f as Builder
    }};
}

pub fn battery() -> Vec<(&'static str, Builder, Tensor)> {
    let p = point(4, 4);
    vec![
        (
            "add",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                t.add(a, b)?
            }),
            p.clone(),
        ),
        (
            "sub",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                t.sub(a, b)?
            }),
            p.clone(),
        ),
        (
            "mul",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                t.mul(a, b)?
            }),
            p.clone(),
        ),
        (
            "div",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                t.div(a, b)?
            }),
            p.clone(),
        ),
        ("neg", unary!(t, x, t.neg(x)?), p.clone()),
        ("scale", unary!(t, x, t.scale(x, -1.7)?), p.clone()),
        (
            "add_scalar",
            unary!(t, x, {
                let y = t.add_scalar(x, 0.3)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        ("square", unary!(t, x, t.square(x)?), p.clone()),
        ("sqrt", unary!(t, x, t.sqrt(x)?), p.clone()),
        ("log", unary!(t, x, t.log(x)?), p.clone()),
        ("exp", unary!(t, x, t.exp(x)?), p.clone()),
        (
            "clamp_stop",
            unary!(t, x, {
                let y = t.clamp_stop(x, 0.8, 1.2)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        (
            "relu",
            unary!(t, x, {
                let y = t.add_scalar(x, -1.0)?;
                let r = t.relu(y)?;
                t.square(r)?
            }),
            p.clone(),
        ),
        (
            "gelu",
            unary!(t, x, {
                let y = t.add_scalar(x, -1.0)?;
                t.gelu(y)?
            }),
            p.clone(),
        ),
        (
            "gelu_d1",
            unary!(t, x, {
                let y = t.add_scalar(x, -1.0)?;
                t.gelu_derivative(y, 1)?
            }),
            p.clone(),
        ),
        (
            "gelu_d2",
            unary!(t, x, {
                let y = t.add_scalar(x, -1.0)?;
                t.gelu_derivative(y, 2)?
            }),
            p.clone(),
        ),
        (
            "matmul",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                let at = t.transpose(a)?;
                let m = t.matmul(at, b)?;
                t.square(m)?
            }),
            p.clone(),
        ),
        (
            "transpose",
            unary!(t, x, {
                let y = t.transpose(x)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        (
            "sum",
            unary!(t, x, {
                let s = t.sum(x)?;
                t.square(s)?
            }),
            p.clone(),
        ),
        (
            "mean",
            unary!(t, x, {
                let s = t.mean(x)?;
                t.exp(s)?
            }),
            p.clone(),
        ),
        (
            "dot",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                let d = t.dot(a, b)?;
                t.square(d)?
            }),
            p.clone(),
        ),
        (
            "broadcast_scalar",
            unary!(t, x, {
                let s = t.mean(x)?;
                let b = t.broadcast_scalar(s, &[4, 4])?;
                t.mul(b, x)?
            }),
            p.clone(),
        ),
        (
            "sum_axis0",
            unary!(t, x, {
                let s = t.sum_axis(x, 0)?;
                t.square(s)?
            }),
            p.clone(),
        ),
        (
            "sum_axis1",
            unary!(t, x, {
                let s = t.sum_axis(x, 1)?;
                t.square(s)?
            }),
            p.clone(),
        ),
        (
            "broadcast_axis",
            unary!(t, x, {
                let s = t.sum_axis(x, 0)?;
                let b = t.broadcast_axis(s, 0, 4)?;
                t.mul(b, x)?
            }),
            p.clone(),
        ),
        (
            "avg_pool",
            unary!(t, x, {
                let y = t.pool(x, 2, PoolMode::Average)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        (
            "max_pool",
            unary!(t, x, {
                let y = t.pool(x, 2, PoolMode::Max)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        (
            "gather_rows",
            unary!(t, x, {
                let idx: Arc<[Option<usize>]> = Arc::from(vec![Some(2), None, Some(0), Some(2), Some(3)]);
                let y = t.gather_rows(x, idx)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        (
            "scatter_rows",
            unary!(t, x, {
                let idx: Arc<[Option<usize>]> = Arc::from(vec![Some(1), None, Some(1), Some(4)]);
                let y = t.scatter_rows(x, idx, 5)?;
                t.square(y)?
            }),
            p.clone(),
        ),
        (
            "slice_cols",
            unary!(t, x, {
                let y = t.slice_cols(x, 1, 3)?;
                t.exp(y)?
            }),
            p.clone(),
        ),
        (
            "pad_cols",
            unary!(t, x, {
                let y = t.pad_cols(x, 2, 7)?;
                let e = t.exp(y)?;
                t.mul(e, y)?
            }),
            p.clone(),
        ),
        (
            "reshape",
            unary!(t, x, {
                let y = t.reshape(x, &[2, 8])?;
                let s = t.sum_axis(y, 1)?;
                t.square(s)?
            }),
            p.clone(),
        ),
        (
            "batch_norm",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                let gamma = t.slice_cols(b, 0, 1)?;
                let gamma = t.sum_axis(gamma, 1)?;
                let g2 = t.reshape(gamma, &[4])?;
                let beta = t.scale(g2, 0.5)?;
                let at = t.transpose(a)?;
                let y = t.batch_norm(at, g2, beta, 1e-5)?;
                t.gelu(y)?
            }),
            p.clone(),
        ),
        (
            "softmax_cross_entropy",
            unary!(t, x, {
                let (a, b) = halves(t, x)?;
                let q = t.exp(b)?;
                let s = t.sum_axis(q, 1)?;
                let sb = t.broadcast_axis(s, 1, 2)?;
                let y = t.div(q, sb)?;
                t.softmax_cross_entropy(a, y)?
            }),
            p,
        ),
    ]
}
