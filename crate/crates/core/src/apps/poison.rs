//! Accuracy-degrading poisoning by projected signed ascent on the first
//! training samples.

use std::io::Write;
use std::sync::Arc;

use super::{fmt_f64, sign};
use crate::autodiff::Precision;
use crate::data::rng::{derive_seed, indexed_stream};
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::replay::{metagrad_replay, MetagradOptions, TreeOptions};
use crate::tensor::Tensor;
use crate::training::{accuracy, train, MetaSlot, ModelSpec, OutputFn, PlanConfig, TrainPlan, UpdateRule};

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    if y.is_empty() {
        return Vec::new();
    }
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Clamps features of `[n, d + c]` rows into `[0, 1]` and, when `simplex`,
/// projects each label part onto the simplex.
pub fn project_samples(z: &Tensor, feature_dim: usize, simplex: bool) -> Result<Tensor> {
    let (n, width) = z.dims2().ok_or_else(|| Error::shape("project_samples", "expected a matrix"))?;
    if feature_dim > width {
        return Err(Error::shape("project_samples", format!("{feature_dim} features in rows of {width}")));
    }
    let mut out = Vec::with_capacity(n * width);
    for i in 0..n {
        let row = z.row(i);
        out.extend(row[..feature_dim].iter().map(|x| x.clamp(0.0, 1.0)));
        if simplex {
            out.extend(project_simplex(&row[feature_dim..]));
        } else {
            out.extend_from_slice(&row[feature_dim..]);
        }
    }
    Tensor::new(vec![n, width], out)
}

/// Entries outside the feature box plus label rows off the simplex, up to
/// `tol`.
pub fn constraint_violations(z: &Tensor, feature_dim: usize, simplex: bool, tol: f64) -> usize {
    let Some((n, _)) = z.dims2() else {
        return usize::MAX;
    };
    let mut bad = 0;
    for i in 0..n {
        let row = z.row(i);
        bad += row[..feature_dim].iter().filter(|&&x| !(-tol..=1.0 + tol).contains(&x)).count();
        if simplex {
            let labels = &row[feature_dim..];
            let sum: f64 = labels.iter().sum();
            if labels.iter().any(|&x| x < -tol) || (sum - 1.0).abs() > tol {
                bad += 1;
            }
        }
    }
    bad
}

#[derive(Debug, Clone)]
pub struct PoisonProblem {
    pub model: ModelSpec,
    pub rule: UpdateRule,
    pub train: Arc<Dataset>,
    pub batch_size: usize,
    pub steps: usize,
    pub precision: Precision,
}

impl PoisonProblem {
    pub fn plan(&self, seed: u64, slot: MetaSlot) -> Result<TrainPlan> {
        let cfg = PlanConfig::new(self.batch_size, self.steps, seed).slot(slot).precision(self.precision);
        TrainPlan::new(self.model.clone(), self.rule, self.train.clone(), cfg)
    }

    /// Plain training on the set with its first rows replaced by `poisons`.
    pub fn train_poisoned(
        &self,
        poisons: Option<&Tensor>,
        seed: u64,
    ) -> Result<(TrainPlan, crate::training::OptimizerState)> {
        let data = match poisons {
            Some(p) => Arc::new(self.train.with_leading_rows(p)?),
            None => self.train.clone(),
        };
        let cfg = PlanConfig::new(self.batch_size, self.steps, seed).precision(self.precision);
        let plan = TrainPlan::new(self.model.clone(), self.rule, data, cfg)?;
        let state = train(&plan, &Tensor::zeros(&plan.z_shape()))?;
        Ok((plan, state))
    }

    fn simplex(&self) -> bool {
        self.train.task() == Task::Classification
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonConfig {
    /// Fraction of the training set that is replaced.
    pub epsilon: f64,
    pub eta: f64,
    pub rounds: usize,
    /// Fraction of the validation set scored per round.
    pub val_fraction: Option<f64>,
    pub seed: u64,
    /// Retrain with a new batch order and initialization every round.
    pub fresh_seed_per_round: bool,
    pub tree: TreeOptions,
}

impl Default for PoisonConfig {
    fn default() -> Self {
        PoisonConfig {
            epsilon: 0.025,
            eta: 0.05,
            rounds: 10,
            val_fraction: None,
            seed: 0,
            fresh_seed_per_round: true,
            tree: TreeOptions::new(4),
        }
    }
}

impl PoisonConfig {
    /// `floor(epsilon n)`, which must be at least one.
    pub fn n_poison(&self, n: usize) -> Result<usize> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::config(format!("poison budget {} outside (0, 1)", self.epsilon)));
        }
        let n_p = (self.epsilon * n as f64).floor() as usize;
        if n_p == 0 {
            return Err(Error::config(format!("budget {} of {n} samples poisons nothing", self.epsilon)));
        }
        Ok(n_p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::config(format!("step size must be >= 0, got {}", self.eta)));
        }
        Ok(())
    }

    pub fn round_seed(&self, round: usize) -> u64 {
        if self.fresh_seed_per_round {
            indexed_seed(self.seed, round)
        } else {
            self.seed
        }
    }
}

fn indexed_seed(seed: u64, round: usize) -> u64 {
    use rand::RngCore;
    indexed_stream(seed, "poison-round", round as u64).next_u64()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonRound {
    pub round: usize,
    /// Validation loss on the round's minibatch.
    pub target_loss: f64,
    /// Validation loss on the full set.
    pub val_loss: f64,
    pub constraint_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoisonResult {
    /// `[n_p, d + c]` rows that replace the first training samples.
    pub poisons: Tensor,
    pub trajectory: Vec<PoisonRound>,
}

impl PoisonResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "round,target_metric,val_metric,constraint_violations")?;
        for r in &self.trajectory {
            writeln!(w, "{},{},{},{}", r.round, fmt_f64(r.target_loss), fmt_f64(r.val_loss), r.constraint_violations)?;
        }
        Ok(())
    }
}

/// Projected signed ascent of validation loss in the first `floor(eps n)`
/// training samples.
pub fn poison_mgd(problem: &PoisonProblem, val: Arc<Dataset>, cfg: &PoisonConfig) -> Result<PoisonResult> {
    cfg.validate()?;
    let n_p = cfg.n_poison(problem.train.len())?;
    let d = problem.train.feature_dim();
    let simplex = problem.simplex();
    let slot = MetaSlot::SamplePerturbation { n_p };
    let mut z = problem.plan(cfg.seed, slot)?.default_z();
    let mut output = OutputFn::mean_loss(val.clone());
    if let Some(q) = cfg.val_fraction {
        output = output.with_fraction(q, derive_seed(cfg.seed, "val-minibatch"));
    }
    let full = OutputFn::mean_loss(val);
    let mut trajectory = Vec::with_capacity(cfg.rounds + 1);
    for r in 0..=cfg.rounds {
        let plan = problem.plan(cfg.round_seed(r), slot)?;
        let (target_loss, state, g) = if r < cfg.rounds {
            let opts = MetagradOptions { round: r as u64, ..Default::default() };
            let rep = metagrad_replay(&plan, &z, &output, &opts, &cfg.tree)?;
            (rep.value, rep.final_state, Some(rep.metagrad))
        } else {
            let state = train(&plan, &z)?;
            (output.evaluate(&plan.model, &state, r as u64)?, state, None)
        };
        let val_loss = full.evaluate(&plan.model, &state, 0)?;
        trajectory.push(PoisonRound {
            round: r,
            target_loss,
            val_loss,
            constraint_violations: constraint_violations(&z, d, simplex, 1e-9),
        });
        if let Some(g) = g {
            let stepped = z.zip_map(&g, |a, b| a + cfg.eta * sign(b))?;
            z = project_samples(&stepped, d, simplex)?;
        }
    }
    Ok(PoisonResult { poisons: z, trajectory })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub seed: u64,
    pub clean_loss: f64,
    pub poisoned_loss: f64,
    pub clean_accuracy: f64,
    pub poisoned_accuracy: f64,
}

impl TransferRow {
    pub fn loss_delta(&self) -> f64 {
        self.poisoned_loss - self.clean_loss
    }

    pub fn accuracy_delta(&self) -> f64 {
        self.poisoned_accuracy - self.clean_accuracy
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub per_seed: Vec<TransferRow>,
}

impl TransferReport {
    /// Seeds where the poisoned model's held-out loss is strictly higher.
    pub fn degraded(&self) -> usize {
        self.per_seed.iter().filter(|r| r.loss_delta() > 0.0).count()
    }

    pub fn mean_loss_delta(&self) -> f64 {
        self.per_seed.iter().map(TransferRow::loss_delta).sum::<f64>() / self.per_seed.len().max(1) as f64
    }

    pub fn mean_accuracy_delta(&self) -> f64 {
        self.per_seed.iter().map(TransferRow::accuracy_delta).sum::<f64>() / self.per_seed.len().max(1) as f64
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "seed,clean_loss,poisoned_loss,loss_delta,clean_accuracy,poisoned_accuracy,accuracy_delta")?;
        for r in &self.per_seed {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                r.seed,
                fmt_f64(r.clean_loss),
                fmt_f64(r.poisoned_loss),
                fmt_f64(r.loss_delta()),
                fmt_f64(r.clean_accuracy),
                fmt_f64(r.poisoned_accuracy),
                fmt_f64(r.accuracy_delta()),
            )?;
        }
        Ok(())
    }
}

/// Retrains `problem` (typically the standard, non-smooth trainer) with and
/// without the poisons and compares held-out loss and accuracy per seed.
pub fn poison_transfer_eval(
    poisons: &Tensor,
    problem: &PoisonProblem,
    test: &Dataset,
    seeds: &[u64],
) -> Result<TransferReport> {
    let output = OutputFn::mean_loss(Arc::new(test.clone()));
    let mut per_seed = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let (plan, clean) = problem.train_poisoned(None, seed)?;
        let (_, dirty) = problem.train_poisoned(Some(poisons), seed)?;
        per_seed.push(TransferRow {
            seed,
            clean_loss: output.evaluate(&plan.model, &clean, 0)?,
            poisoned_loss: output.evaluate(&plan.model, &dirty, 0)?,
            clean_accuracy: accuracy(&plan.model, &clean.params, test)?,
            poisoned_accuracy: accuracy(&plan.model, &dirty.params, test)?,
        });
    }
    Ok(TransferReport { per_seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_and_simplex() {
        let z = Tensor::from_rows(&[&[1.3, -0.2, 0.5, 0.7, -0.2], &[0.5, 0.5, 0.25, 0.25, 0.5]]);
        let p = project_samples(&z, 2, true).unwrap();
        assert_eq!(&p.row(0)[..2], &[1.0, 0.0]);
        assert_eq!(p.row(1), z.row(1));
        let s: f64 = p.row(0)[2..].iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(constraint_violations(&z, 2, true, 1e-9), 3);
        assert_eq!(constraint_violations(&p, 2, true, 1e-9), 0);
    }

    #[test]
    fn budget() {
        let cfg = PoisonConfig { epsilon: 0.025, ..Default::default() };
        assert_eq!(cfg.n_poison(200).unwrap(), 5);
        assert!(cfg.n_poison(20).is_err());
    }
}
