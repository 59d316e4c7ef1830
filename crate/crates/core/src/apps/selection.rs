//! Data selection by signed steps on integer sample counts.

use std::io::Write;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use super::{fmt_f64, sign};
use crate::autodiff::Precision;
use crate::data::rng::indexed_stream;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::replay::{metagrad_replay, MetagradOptions, MetagradReport, TreeOptions};
use crate::tensor::Tensor;
use crate::training::{train, MetaSlot, ModelSpec, OutputFn, PlanConfig, TrainPlan, UpdateRule};

/// Copies of every pool sample in the training set.
pub type DataCounts = Vec<usize>;

/// Everything needed to train on a weighted pool.
#[derive(Debug, Clone)]
pub struct SelectionProblem {
    pub model: ModelSpec,
    pub rule: UpdateRule,
    pub pool: Arc<Dataset>,
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl SelectionProblem {
    pub fn plan(&self, counts: &[usize], slot: MetaSlot) -> Result<TrainPlan> {
        let cfg = PlanConfig::new(self.batch_size, self.steps, self.seed)
            .counts(counts.to_vec())
            .slot(slot)
            .precision(self.precision);
        TrainPlan::new(self.model.clone(), self.rule, self.pool.clone(), cfg)
    }

    /// Mean loss of `output`'s set after plain training on `counts`.
    pub fn evaluate(&self, counts: &[usize], output: &OutputFn) -> Result<f64> {
        let plan = self.plan(counts, MetaSlot::None)?;
        let state = train(&plan, &Tensor::zeros(&plan.z_shape()))?;
        output.evaluate(&plan.model, &state, 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    /// Probability that a coordinate moves in a round.
    pub p: f64,
    pub rounds: usize,
    /// Step whose loss carries the sample weights; defaults to 90% of `T`.
    pub surrogate_step: Option<usize>,
    pub surrogate_scale: f64,
    /// Fraction of the target set scored per round.
    pub eval_fraction: Option<f64>,
    /// Hold the selected-set size at its initial value.
    pub fixed_size: bool,
    pub init_counts: Option<DataCounts>,
    pub seed: u64,
    pub tree: TreeOptions,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            p: 0.2,
            rounds: 10,
            surrogate_step: None,
            surrogate_scale: 1.0,
            eval_fraction: None,
            fixed_size: false,
            init_counts: None,
            seed: 0,
            tree: TreeOptions::new(4),
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self, steps: usize) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::config(format!("mask probability {} outside (0, 1]", self.p)));
        }
        if steps == 0 {
            return Err(Error::config("selection needs at least one training step"));
        }
        if let Some(k) = self.surrogate_step {
            if k >= steps {
                return Err(Error::config(format!("surrogate step {k} must be < T = {steps}")));
            }
        }
        Ok(())
    }

    pub fn surrogate_step(&self, steps: usize) -> usize {
        self.surrogate_step.unwrap_or((steps * 9 / 10).min(steps.saturating_sub(1)))
    }
}

/// Metagradient of `output` with respect to per-sample loss weights at the
/// surrogate step, evaluated at zero weight.
pub fn surrogate_metagrad(
    problem: &SelectionProblem,
    counts: &[usize],
    output: &OutputFn,
    cfg: &SelectionConfig,
    round: u64,
) -> Result<MetagradReport> {
    let slot = MetaSlot::DataWeights { k: cfg.surrogate_step(problem.steps), scale: cfg.surrogate_scale };
    let plan = problem.plan(counts, slot)?;
    let z = Tensor::zeros(&plan.z_shape());
    let opts = MetagradOptions { round, ..Default::default() };
    metagrad_replay(&plan, &z, output, &opts, &cfg.tree)
}

/// `max(0, c - sign(g) * m)` with `m_i ~ Bernoulli(p)`.
pub fn counts_update<R: Rng>(c: &[usize], g: &[f64], p: f64, rng: &mut R) -> Result<DataCounts> {
    if c.len() != g.len() {
        return Err(Error::shape("counts_update", format!("{} counts, {} gradients", c.len(), g.len())));
    }
    let p = p.clamp(0.0, 1.0);
    Ok(c.iter()
        .zip(g)
        .map(|(&ci, &gi)| {
            let m = rng.random_bool(p);
            match (m, sign(gi)) {
                (true, s) if s > 0.0 => ci.saturating_sub(1),
                (true, s) if s < 0.0 => ci + 1,
                _ => ci,
            }
        })
        .collect())
}

/// Moves `c` to total `size`, removing copies of the samples with the
/// largest `g` first and adding copies of those with the smallest.
pub fn fix_size(mut c: DataCounts, g: &[f64], size: usize) -> DataCounts {
    let mut order: Vec<usize> = (0..c.len()).collect();
    order.sort_by(|&a, &b| g[b].total_cmp(&g[a]));
    let mut total: usize = c.iter().sum();
    while total > size {
        for &i in &order {
            if total == size {
                break;
            }
            if c[i] > 0 {
                c[i] -= 1;
                total -= 1;
            }
        }
    }
    while total < size && !c.is_empty() {
        for &i in order.iter().rev() {
            if total == size {
                break;
            }
            c[i] += 1;
            total += 1;
        }
    }
    c
}

/// `size` distinct samples when `size <= n`; beyond that every sample once
/// plus random repeats.
pub fn random_subset_counts(n: usize, size: usize, seed: u64) -> DataCounts {
    let mut rng = indexed_stream(seed, "random-subset", 0);
    let mut c = vec![0; n];
    let mut left = size;
    while left > 0 && n > 0 {
        let take = left.min(n);
        for i in sample(&mut rng, n, take) {
            c[i] += 1;
        }
        left -= take;
    }
    c
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionRound {
    pub round: usize,
    pub target_loss: f64,
    pub val_loss: f64,
    pub selected_size: usize,
    pub counts: DataCounts,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Counts of the round with the lowest validation loss.
    pub counts: DataCounts,
    pub best_round: usize,
    pub trajectory: Vec<SelectionRound>,
}

impl SelectionResult {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "round,target_metric,val_metric,selected_size")?;
        for r in &self.trajectory {
            writeln!(w, "{},{},{},{}", r.round, fmt_f64(r.target_loss), fmt_f64(r.val_loss), r.selected_size)?;
        }
        Ok(())
    }
}

/// Runs `cfg.rounds` rounds of metagradient steps on the counts. Round `r`
/// trains on the current counts, records target and validation loss, and
/// (except after the last round) updates the counts.
pub fn select_data_mgd(
    problem: &SelectionProblem,
    target: Arc<Dataset>,
    val: Arc<Dataset>,
    cfg: &SelectionConfig,
) -> Result<SelectionResult> {
    cfg.validate(problem.steps)?;
    let n = problem.pool.len();
    let mut c = match &cfg.init_counts {
        Some(c) if c.len() != n => return Err(Error::config(format!("{} initial counts for {n} samples", c.len()))),
        Some(c) => c.clone(),
        None => vec![1; n],
    };
    let size0: usize = c.iter().sum();
    let mut output = OutputFn::mean_loss(target.clone());
    if let Some(q) = cfg.eval_fraction {
        output = output.with_fraction(q, cfg.seed);
    }
    let target_full = OutputFn::mean_loss(target);
    let val_full = OutputFn::mean_loss(val);
    let mut trajectory = Vec::with_capacity(cfg.rounds + 1);
    let mut best: Option<(usize, f64)> = None;
    for r in 0..=cfg.rounds {
        if c.iter().all(|&x| x == 0) {
            return Err(Error::EmptyTrainingSet);
        }
        let (state, g) = if r < cfg.rounds {
            let rep = surrogate_metagrad(problem, &c, &output, cfg, r as u64)?;
            (rep.final_state, Some(rep.metagrad))
        } else {
            let plan = problem.plan(&c, MetaSlot::None)?;
            (train(&plan, &Tensor::zeros(&plan.z_shape()))?, None)
        };
        let target_loss = target_full.evaluate(&problem.model, &state, 0)?;
        let val_loss = val_full.evaluate(&problem.model, &state, 0)?;
        if val_loss.is_finite() && best.is_none_or(|(_, b)| val_loss < b) {
            best = Some((r, val_loss));
        }
        trajectory.push(SelectionRound {
            round: r,
            target_loss,
            val_loss,
            selected_size: c.iter().sum(),
            counts: c.clone(),
        });
        if let Some(g) = g {
            let mut rng = indexed_stream(cfg.seed, "count-mask", r as u64);
            c = counts_update(&c, g.data(), cfg.p, &mut rng)?;
            if cfg.fixed_size {
                c = fix_size(c, g.data(), size0);
            }
        }
    }
    let best_round = best.map_or(0, |(r, _)| r);
    Ok(SelectionResult { counts: trajectory[best_round].counts.clone(), best_round, trajectory })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn update_example() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let c = counts_update(&[2, 0, 1], &[-1.5, 0.3, 0.0], 1.0, &mut rng).unwrap();
        assert_eq!(c, vec![3, 0, 1]);
        let c = counts_update(&[2, 0, 1], &[-1.5, 0.3, 0.0], 0.0, &mut rng).unwrap();
        assert_eq!(c, vec![2, 0, 1]);
    }

    #[test]
    fn fix_size_prefers_extreme_gradients() {
        assert_eq!(fix_size(vec![1, 1, 1], &[0.5, -1.0, 2.0], 2), vec![1, 1, 0]);
        assert_eq!(fix_size(vec![1, 0, 1], &[0.5, -1.0, 2.0], 3), vec![1, 1, 1]);
        assert_eq!(fix_size(vec![0, 0, 1], &[0.5, -1.0, 2.0], 1), vec![0, 0, 1]);
    }

    #[test]
    fn random_subset_has_the_requested_size() {
        let c = random_subset_counts(10, 7, 3);
        assert_eq!(c.iter().sum::<usize>(), 7);
        assert!(c.iter().all(|&x| x <= 1));
        assert_eq!(random_subset_counts(4, 9, 3).iter().sum::<usize>(), 9);
    }
}
