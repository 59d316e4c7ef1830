use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::{Dataset, Task};
use super::rng::stream;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SyntheticKind {
    /// Two isotropic clusters centred at 0.3 and 0.7 in every coordinate.
    TwoGaussians { dim: usize },
    /// Inner disc (class 0) and surrounding annulus (class 1) in 2-D.
    Ring,
    /// `y = w . x + noise`, features uniform on the unit cube.
    LinearRegression { dim: usize },
}

/// Deterministic synthetic data. Classification kinds alternate classes, so
/// they are balanced; features are clamped to the unit box.
pub fn gen_synthetic(kind: SyntheticKind, n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::config("synthetic datasets need n >= 2"));
    }
    if !(noise >= 0.0) || !noise.is_finite() {
        return Err(Error::config(format!("noise must be >= 0, got {noise}")));
    }
    let mut rng = stream(seed, "synthetic");
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    match kind {
        SyntheticKind::TwoGaussians { dim } => {
            if dim == 0 {
                return Err(Error::config("dim must be >= 1"));
            }
            let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let mut f = Vec::with_capacity(n * dim);
            for &c in &classes {
                let centre = if c == 0 { 0.3 } else { 0.7 };
                for _ in 0..dim {
                    let x: f64 = centre + noise * gauss.sample(&mut rng);
                    f.push(x.clamp(0.0, 1.0));
                }
            }
            Dataset::from_classes(
                Tensor::new(vec![n, dim], f)?,
                &classes,
                2,
                format!("two-gaussians(dim={dim},noise={noise})"),
                seed,
            )
        }
        SyntheticKind::Ring => {
            let classes: Vec<usize> = (0..n).map(|i| i % 2).collect();
            let mut f = Vec::with_capacity(n * 2);
            for &c in &classes {
                let angle = rng.random::<f64>() * std::f64::consts::TAU;
                let radius = if c == 0 { 0.15 * rng.random::<f64>().sqrt() } else { 0.35 };
                let r = radius + noise * gauss.sample(&mut rng);
                f.push((0.5 + r * angle.cos()).clamp(0.0, 1.0));
                f.push((0.5 + r * angle.sin()).clamp(0.0, 1.0));
            }
            Dataset::from_classes(Tensor::new(vec![n, 2], f)?, &classes, 2, format!("ring(noise={noise})"), seed)
        }
        SyntheticKind::LinearRegression { dim } => {
            if dim == 0 {
                return Err(Error::config("dim must be >= 1"));
            }
            let w: Vec<f64> = (0..dim).map(|_| gauss.sample(&mut rng)).collect();
            let mut f = Vec::with_capacity(n * dim);
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                let x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>()).collect();
                let clean: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                y.push(clean + noise * gauss.sample(&mut rng));
                f.extend(x);
            }
            Dataset::new(
                Tensor::new(vec![n, dim], f)?,
                Tensor::new(vec![n, 1], y)?,
                Task::Regression,
                format!("linear-regression(dim={dim},noise={noise})"),
                seed,
            )
        }
    }
}

/// Moves exactly `round(rate * n)` samples, chosen by `seed`, to a different
/// class. Returns the new set and the sorted flipped indices.
pub fn flip_labels(ds: &Dataset, rate: f64, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if ds.task() != Task::Classification {
        return Err(Error::config("label flips need a classification set"));
    }
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::config(format!("flip rate {rate} outside [0, 1]")));
    }
    let n = ds.len();
    let c = ds.label_dim();
    if c < 2 {
        return Err(Error::config("label flips need at least two classes"));
    }
    let count = (rate * n as f64).round() as usize;
    let mut rng = stream(seed, "label-flip");
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let mut flipped = idx[..count].to_vec();
    flipped.sort_unstable();
    let mut labels = ds.labels().clone();
    for &i in &flipped {
        let old = ds.class_of(i);
        let new = (old + 1 + rng.random_range(0..c - 1)) % c;
        let row = &mut labels.data_mut()[i * c..(i + 1) * c];
        row.fill(0.0);
        row[new] = 1.0;
    }
    let out = Dataset::new(
        ds.features().clone(),
        labels,
        Task::Classification,
        format!("{}+flip({rate})", ds.source()),
        ds.seed(),
    )?;
    Ok((out, flipped))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_gaussians_sit_on_centres() {
        let ds = gen_synthetic(SyntheticKind::TwoGaussians { dim: 3 }, 10, 0.0, 1).unwrap();
        for i in 0..10 {
            let want = if ds.class_of(i) == 0 { 0.3 } else { 0.7 };
            assert!(ds.features().row(i).iter().all(|&x| x == want));
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        for kind in
            [SyntheticKind::TwoGaussians { dim: 4 }, SyntheticKind::Ring, SyntheticKind::LinearRegression { dim: 3 }]
        {
            let a = gen_synthetic(kind, 20, 0.1, 5).unwrap();
            let b = gen_synthetic(kind, 20, 0.1, 5).unwrap();
            assert_eq!(a.to_snapshot().to_bytes(), b.to_snapshot().to_bytes());
        }
    }

    #[test]
    fn classes_are_balanced() {
        let ds = gen_synthetic(SyntheticKind::Ring, 50, 0.01, 2).unwrap();
        let ones = (0..50).filter(|&i| ds.class_of(i) == 1).count();
        assert_eq!(ones, 25);
    }

    #[test]
    fn flip_fraction_is_exact() {
        let ds = gen_synthetic(SyntheticKind::TwoGaussians { dim: 2 }, 200, 0.1, 3).unwrap();
        let (flipped, idx) = flip_labels(&ds, 0.1, 4).unwrap();
        assert_eq!(idx.len(), 20);
        let changed = (0..200).filter(|&i| flipped.class_of(i) != ds.class_of(i)).count();
        assert_eq!(changed, 20);
    }

    #[test]
    fn negative_noise_is_rejected() {
        assert!(gen_synthetic(SyntheticKind::Ring, 10, -0.1, 0).is_err());
    }
}
