//! Tanh-approximated GELU and its derivatives of every order.
//!
//! Orders 0..=2 use closed forms. Higher orders are read off a truncated
//! Taylor expansion, which is also what the tests use to check the closed
//! forms.

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const CUBIC: f64 = 0.044_715;

/// `d^order/dx^order gelu(x)`.
pub fn gelu_derivative(x: f64, order: u32) -> f64 {
    let u = SQRT_2_OVER_PI * (x + CUBIC * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * CUBIC * x * x);
    match order {
        0 => 0.5 * x * (1.0 + t),
        1 => 0.5 * (1.0 + t) + 0.5 * x * sech2 * du,
        2 => {
            let d2u = 6.0 * SQRT_2_OVER_PI * CUBIC * x;
            sech2 * du + 0.5 * x * sech2 * (d2u - 2.0 * t * du * du)
        }
        _ => gelu_taylor(x, order),
    }
}

/// Derivative via Taylor-coefficient propagation through
/// `0.5 x (1 + tanh(c (x + a x^3)))`.
pub(crate) fn gelu_taylor(x: f64, order: u32) -> f64 {
    let k = order as usize;
    let n = k + 1;
    let mut xs = vec![0.0; n];
    xs[0] = x;
    if n > 1 {
        xs[1] = 1.0;
    }
    let x3 = series_mul(&series_mul(&xs, &xs), &xs);
    let u: Vec<f64> = xs.iter().zip(&x3).map(|(&a, &b)| SQRT_2_OVER_PI * (a + CUBIC * b)).collect();
    let mut t = series_tanh(&u);
    t[0] += 1.0;
    let g = series_mul(&xs, &t);
    let factorial: f64 = (1..=k).map(|i| i as f64).product();
    0.5 * g[k] * factorial
}

fn series_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n];
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().take(n - i).enumerate() {
            out[i + j] += ai * bj;
        }
    }
    out
}

// y = tanh(u) satisfies y' = (1 - y^2) u'.
fn series_tanh(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    let mut y = vec![0.0; n];
    let mut w = vec![0.0; n];
    y[0] = u[0].tanh();
    w[0] = 1.0 - y[0] * y[0];
    for k in 1..n {
        let mut acc = 0.0;
        for j in 1..=k {
            acc += j as f64 * u[j] * w[k - j];
        }
        y[k] = acc / k as f64;
        let mut sq = 0.0;
        for i in 0..=k {
            sq += y[i] * y[k - i];
        }
        w[k] = -sq;
    }
    y
}
