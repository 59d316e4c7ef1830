use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::ModelSpec;
use super::optimizer::UpdateRule;
use super::state::OptimizerState;
use crate::autodiff::Precision;
use crate::data::rng::indexed_stream;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How the learning rate depends on `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "k", rename_all = "kebab-case")]
pub enum LrParam {
    /// One learning rate for every step.
    Constant,
    /// One learning rate per step.
    PerStep,
    /// Linear interpolation between `k` evenly spaced keypoints.
    Keypoints(usize),
}

/// Which metaparameter a plan consumes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum MetaSlot {
    None,
    /// Per-pool-sample loss weights added to the objective of step `k`,
    /// multiplied by `scale`.
    DataWeights {
        k: usize,
        scale: f64,
    },
    /// The first `n_p` training rows, as `[features | labels]`.
    SamplePerturbation {
        n_p: usize,
    },
    LearningRate(LrParam),
}

/// Value at step `t` of a `T`-step schedule interpolating `kp`, with the
/// keypoints placed at fractions `i / (k - 1)` of training.
pub fn lr_schedule_value(kp: &[f64], t: usize, total: usize) -> f64 {
    keypoint_weights(kp.len(), t, total).iter().zip(kp).map(|(w, k)| w * k).sum()
}

/// Interpolation weights of each keypoint at step `t`.
pub fn keypoint_weights(k: usize, t: usize, total: usize) -> Vec<f64> {
    assert!(k >= 2, "a keypoint schedule needs k >= 2");
    let mut w = vec![0.0; k];
    if total == 0 {
        w[0] = 1.0;
        return w;
    }
    let u = t.min(total) as f64 * (k - 1) as f64 / total as f64;
    let i = (u.floor() as usize).min(k - 2);
    let frac = u - i as f64;
    w[i] = 1.0 - frac;
    w[i + 1] = frac;
    w
}

/// Per-epoch permutations of `0..n`, cut into full batches; a trailing
/// partial batch is dropped.
pub fn deterministic_batches(seed: u64, n: usize, batch_size: usize, epochs: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 || batch_size > n {
        return Err(Error::config(format!("batch size {batch_size} with {n} samples")));
    }
    let mut out = Vec::with_capacity(epochs * (n / batch_size));
    for e in 0..epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut indexed_stream(seed, "batches", e as u64));
        out.extend(perm.chunks_exact(batch_size).map(<[usize]>::to_vec));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub seed: u64,
    pub slot: MetaSlot,
    pub precision: Precision,
    /// Copies of each data row; `None` means one each.
    pub counts: Option<Vec<usize>>,
}

impl PlanConfig {
    pub fn new(batch_size: usize, steps: usize, seed: u64) -> Self {
        PlanConfig { batch_size, steps, seed, slot: MetaSlot::None, precision: Precision::F64, counts: None }
    }

    pub fn slot(mut self, slot: MetaSlot) -> Self {
        self.slot = slot;
        self
    }

    pub fn counts(mut self, counts: Vec<usize>) -> Self {
        self.counts = Some(counts);
        self
    }

    pub fn precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }
}

/// A frozen training setup: model, update rule, data and batch order.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub model: ModelSpec,
    pub rule: UpdateRule,
    pub data: Arc<Dataset>,
    /// Data row indices of every step's batch.
    pub batches: Vec<Vec<usize>>,
    pub seed: u64,
    pub slot: MetaSlot,
    pub precision: Precision,
    config: PlanConfig,
}

impl TrainPlan {
    pub fn new(model: ModelSpec, rule: UpdateRule, data: Arc<Dataset>, cfg: PlanConfig) -> Result<Self> {
        model.validate(data.feature_dim(), data.label_dim())?;
        rule.validate(cfg.slot != MetaSlot::None)?;
        let rows: Vec<usize> = match &cfg.counts {
            None => (0..data.len()).collect(),
            Some(c) => {
                if c.len() != data.len() {
                    return Err(Error::config(format!("{} counts for {} samples", c.len(), data.len())));
                }
                c.iter().enumerate().flat_map(|(i, &k)| std::iter::repeat_n(i, k)).collect()
            }
        };
        if rows.is_empty() {
            return Err(Error::EmptyTrainingSet);
        }
        let per_epoch = rows.len() / cfg.batch_size.max(1);
        let epochs = if per_epoch == 0 { 1 } else { cfg.steps.div_ceil(per_epoch) };
        let mut batches = deterministic_batches(cfg.seed, rows.len(), cfg.batch_size, epochs)?;
        batches.truncate(cfg.steps);
        for b in &mut batches {
            for i in b.iter_mut() {
                *i = rows[*i];
            }
        }
        match cfg.slot {
            MetaSlot::DataWeights { k, scale } => {
                if k >= cfg.steps || !scale.is_finite() {
                    return Err(Error::config(format!("surrogate step {k} must be < T = {}", cfg.steps)));
                }
            }
            MetaSlot::SamplePerturbation { n_p } => {
                if n_p == 0 || n_p > data.len() {
                    return Err(Error::config(format!("{n_p} perturbed samples out of {}", data.len())));
                }
            }
            MetaSlot::LearningRate(LrParam::Keypoints(k)) if k < 2 => {
                return Err(Error::config("keypoint schedules need k >= 2"));
            }
            _ => {}
        }
        Ok(TrainPlan {
            model,
            rule,
            data,
            batches,
            seed: cfg.seed,
            slot: cfg.slot,
            precision: cfg.precision,
            config: cfg,
        })
    }

    /// Number of optimizer steps `T`.
    pub fn steps(&self) -> usize {
        self.batches.len()
    }

    pub fn z_shape(&self) -> Vec<usize> {
        match self.slot {
            MetaSlot::None => vec![0],
            MetaSlot::DataWeights { .. } => vec![self.data.len()],
            MetaSlot::SamplePerturbation { n_p } => vec![n_p, self.data.feature_dim() + self.data.label_dim()],
            MetaSlot::LearningRate(LrParam::Constant) => vec![1],
            MetaSlot::LearningRate(LrParam::PerStep) => vec![self.steps()],
            MetaSlot::LearningRate(LrParam::Keypoints(k)) => vec![k],
        }
    }

    /// The metaparameter value that reproduces the unmodified setup.
    pub fn default_z(&self) -> Tensor {
        match self.slot {
            MetaSlot::SamplePerturbation { n_p } => {
                let idx: Vec<usize> = (0..n_p).collect();
                self.data.subset(&idx).expect("in range").joined()
            }
            MetaSlot::LearningRate(_) => Tensor::full(&self.z_shape(), self.rule.lr),
            _ => Tensor::zeros(&self.z_shape()),
        }
    }

    pub fn check_z(&self, z: &Tensor) -> Result<()> {
        if z.shape() != self.z_shape() {
            return Err(Error::shape("metaparameter", format!("{:?}, plan expects {:?}", z.shape(), self.z_shape())));
        }
        Ok(())
    }

    /// Learning-rate weights `w_t` with `lr_t = w_t . z`, for learning-rate
    /// plans.
    pub fn lr_weights(&self, t: usize) -> Option<Vec<f64>> {
        match self.slot {
            MetaSlot::LearningRate(LrParam::Constant) => Some(vec![1.0]),
            MetaSlot::LearningRate(LrParam::PerStep) => {
                let mut w = vec![0.0; self.steps()];
                w[t] = 1.0;
                Some(w)
            }
            MetaSlot::LearningRate(LrParam::Keypoints(k)) => Some(keypoint_weights(k, t, self.steps())),
            _ => None,
        }
    }

    pub fn init_state(&self) -> OptimizerState {
        let params = self.model.init_from_seed(self.seed);
        let aux = self.rule.init_aux(&params);
        OptimizerState { t: 0, params, aux }
    }

    /// The same setup with a different seed for batch order and
    /// initialization.
    pub fn with_seed(&self, seed: u64) -> Result<Self> {
        let cfg = PlanConfig { seed, ..self.config.clone() };
        TrainPlan::new(self.model.clone(), self.rule, self.data.clone(), cfg)
    }

    pub fn config(&self) -> &PlanConfig {
        &self.config
    }
}
