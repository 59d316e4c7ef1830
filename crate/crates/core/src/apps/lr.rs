//! Learning-rate schedule search by signed steps on keypoints.

use std::io::Write;

use super::{fmt_f64, sign};
use crate::error::{Error, Result};
use crate::replay::{metagrad_replay, MetagradOptions, TreeOptions};
use crate::tensor::Tensor;
use crate::training::{train, OutputFn, TrainPlan};

#[derive(Debug, Clone, PartialEq)]
pub struct LrConfig {
    pub alpha: f64,
    pub rounds: usize,
    /// Keypoints are clamped to at least this value.
    pub floor: f64,
    pub tree: TreeOptions,
}

impl Default for LrConfig {
    fn default() -> Self {
        LrConfig { alpha: 0.01, rounds: 20, floor: 1e-6, tree: TreeOptions::new(4) }
    }
}

impl LrConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::config(format!("step size must be >= 0, got {}", self.alpha)));
        }
        if !(self.floor > 0.0) {
            return Err(Error::config(format!("keypoint floor must be > 0, got {}", self.floor)));
        }
        Ok(())
    }
}

pub fn flat_keypoints(k: usize, lr: f64) -> Vec<f64> {
    vec![lr; k]
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrRound {
    pub round: usize,
    /// `phi` after training with this round's keypoints; NaN if training
    /// diverged.
    pub target: f64,
    /// Optional second output, e.g. a held-out loss.
    pub test: Option<f64>,
    pub keypoints: Vec<f64>,
    pub alpha: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LrResult {
    /// Keypoints of the last round that trained successfully.
    pub keypoints: Vec<f64>,
    pub trajectory: Vec<LrRound>,
}

impl LrResult {
    pub fn final_target(&self) -> f64 {
        self.trajectory.iter().rev().find(|r| !r.diverged).map_or(f64::NAN, |r| r.target)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "round,target_metric,val_metric,keypoints,alpha,diverged")?;
        for r in &self.trajectory {
            let kp: Vec<String> = r.keypoints.iter().map(|x| fmt_f64(*x)).collect();
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.round,
                fmt_f64(r.target),
                r.test.map(fmt_f64).unwrap_or_default(),
                kp.join(";"),
                fmt_f64(r.alpha),
                r.diverged
            )?;
        }
        Ok(())
    }
}

fn step_keypoints(kp: &[f64], g: &Tensor, alpha: f64, floor: f64) -> Vec<f64> {
    kp.iter().zip(g.data()).map(|(k, gi)| (k - alpha * sign(*gi)).max(floor)).collect()
}

/// Signed descent `eta <- max(floor, eta - alpha sign(grad))` on the
/// keypoints of a learning-rate plan. A round whose training diverges is
/// recorded, discarded, and retried from the previous keypoints with half
/// the step size.
pub fn optimize_lr_schedule(
    init: &[f64],
    plan: &TrainPlan,
    output: &OutputFn,
    test: Option<&OutputFn>,
    cfg: &LrConfig,
) -> Result<LrResult> {
    cfg.validate()?;
    let shape = plan.z_shape();
    if shape != [init.len()] || plan.lr_weights(0).is_none() {
        return Err(Error::config(format!("{} keypoints for a plan expecting {shape:?}", init.len())));
    }
    if init.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::config("keypoints must be > 0"));
    }
    let mut alpha = cfg.alpha;
    let mut eta = init.to_vec();
    let mut last: Option<(Vec<f64>, Tensor)> = None;
    let mut good = eta.clone();
    let mut trajectory = Vec::with_capacity(cfg.rounds + 1);
    let opts_for = |r: usize| MetagradOptions { round: r as u64, ..Default::default() };
    for r in 0..=cfg.rounds {
        let z = Tensor::vector(eta.clone());
        let result = if r < cfg.rounds {
            metagrad_replay(plan, &z, output, &opts_for(r), &cfg.tree)
                .map(|rep| (rep.value, rep.final_state, Some(rep.metagrad)))
        } else {
            train(plan, &z).and_then(|s| Ok((output.evaluate(&plan.model, &s, r as u64)?, s, None)))
        };
        match result {
            Ok((value, state, g)) => {
                let test = test.map(|t| t.evaluate(&plan.model, &state, 0)).transpose()?;
                trajectory.push(LrRound {
                    round: r,
                    target: value,
                    test,
                    keypoints: eta.clone(),
                    alpha,
                    diverged: false,
                });
                good = eta.clone();
                if let Some(g) = g {
                    let next = step_keypoints(&eta, &g, alpha, cfg.floor);
                    last = Some((eta, g));
                    eta = next;
                }
            }
            Err(e) if e.is_numerical() && last.is_some() => {
                trajectory.push(LrRound {
                    round: r,
                    target: f64::NAN,
                    test: None,
                    keypoints: eta.clone(),
                    alpha,
                    diverged: true,
                });
                alpha /= 2.0;
                let (prev, g) = last.as_ref().expect("checked");
                eta = step_keypoints(prev, g, alpha, cfg.floor);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(LrResult { keypoints: good, trajectory })
}

/// The candidate schedule with the lowest output; diverging candidates are
/// skipped.
pub fn lr_grid_search(plan: &TrainPlan, output: &OutputFn, grid: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    let mut best: Option<(Vec<f64>, f64)> = None;
    for kp in grid {
        let value = match train(plan, &Tensor::vector(kp.clone())) {
            Ok(s) => output.evaluate(&plan.model, &s, 0)?,
            Err(e) if e.is_numerical() => continue,
            Err(e) => return Err(e),
        };
        if value.is_finite() && best.as_ref().is_none_or(|(_, b)| value < *b) {
            best = Some((kp.clone(), value));
        }
    }
    best.ok_or(Error::NonFiniteObjective)
}
