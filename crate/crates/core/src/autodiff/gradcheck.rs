//! Finite-difference checks of tape gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Above this many coordinates, random directions replace per-coordinate
/// differences.
pub const MAX_COORDINATE_CHECKS: usize = 256;
const RANDOM_DIRECTIONS: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Coordinate (or direction index, for large inputs) with the worst error.
    pub worst_coordinate: usize,
    pub h: f64,
}

/// `|a - n| / max(|a|, |n|, floor)`, defined as 0 when both are 0.
///
/// `floor` keeps coordinates whose true derivative sits at the round-off
/// level of the finite difference from dominating the report.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(floor)
}

fn error_floor(grad: &Tensor) -> f64 {
    1e-4 * grad.max_abs().max(1.0)
}

fn eval_scalar<F>(f: &F, point: &Tensor) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(point.clone());
    let y = f(&mut tape, x)?;
    if tape.value(y).len() != 1 {
        return Err(Error::shape("check_gradient", "builder must return a scalar"));
    }
    Ok(tape.value(y).item())
}

fn gradient_at<F>(f: &F, point: &Tensor) -> Result<(Tensor, Tape, Var, Var)>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.input(point.clone());
    let y = f(&mut tape, x)?;
    if tape.value(y).len() != 1 {
        return Err(Error::shape("check_gradient", "builder must return a scalar"));
    }
    let one = tape.constant(Tensor::full(tape.value(y).shape(), 1.0));
    let g = tape.vjp(&[y], &[one], &[x])?[0];
    Ok((tape.value(g).clone(), tape, x, g))
}

fn directions(point: &Tensor) -> Vec<Tensor> {
    let n = point.len();
    if n <= MAX_COORDINATE_CHECKS {
        return (0..n)
            .map(|i| {
                let mut e = Tensor::zeros(point.shape());
                e.data_mut()[i] = 1.0;
                e
            })
            .collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x6772_6164);
    (0..RANDOM_DIRECTIONS)
        .map(|_| {
            let mut v = Tensor::zeros(point.shape());
            for x in v.data_mut() {
                *x = if rng.random::<bool>() { 1.0 } else { -1.0 };
            }
            let norm = v.norm_l2();
            v.map(|x| x / norm)
        })
        .collect()
}

/// Compares the tape gradient of a scalar function with central differences.
pub fn check_gradient<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be > 0"));
    }
    let (grad, ..) = gradient_at(&f, point)?;
    let floor = error_floor(&grad);
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_coordinate: 0, h };
    for (i, v) in directions(point).iter().enumerate() {
        let plus = eval_scalar(&f, &point.axpy(h, v)?)?;
        let minus = eval_scalar(&f, &point.axpy(-h, v)?)?;
        let numeric = (plus - minus) / (2.0 * h);
        let err = relative_error(grad.dot(v), numeric, floor);
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst_coordinate = i;
        }
    }
    Ok(report)
}

/// Compares Hessian-vector products obtained by differentiating the
/// recorded gradient against central differences of the gradient.
pub fn check_second_order<F>(f: F, point: &Tensor, h: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::config("finite-difference step must be > 0"));
    }
    let mut report = GradCheckReport { max_rel_err: 0.0, worst_coordinate: 0, h };
    for (i, v) in directions(point).iter().enumerate() {
        let (_, mut tape, x, g) = gradient_at(&f, point)?;
        let vv = tape.constant(v.clone());
        let hv = tape.vjp(&[g], &[vv], &[x])?[0];
        let analytic = tape.value(hv).clone();
        let (gp, ..) = gradient_at(&f, &point.axpy(h, v)?)?;
        let (gm, ..) = gradient_at(&f, &point.axpy(-h, v)?)?;
        let numeric = gp.zip_map(&gm, |a, b| (a - b) / (2.0 * h))?;
        let floor = error_floor(&analytic);
        for (&a, &n) in analytic.data().iter().zip(numeric.data()) {
            let err = relative_error(a, n, floor);
            if err > report.max_rel_err {
                report.max_rel_err = err;
                report.worst_coordinate = i;
            }
        }
    }
    Ok(report)
}
