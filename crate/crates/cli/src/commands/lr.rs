//! Learning-rate keypoint search from a flat schedule.

use std::io::Write;
use std::path::PathBuf;

use metagrad::apps::{flat_keypoints, optimize_lr_schedule, LrConfig};
use metagrad::training::{LrParam, MetaSlot, OutputFn, PlanConfig, TrainPlan};

use super::fmt;
use crate::config::{Config, Preset};
use crate::error::CliError;
use crate::output::RunDir;
use crate::setup;

pub fn run(cfg: &Config) -> Result<PathBuf, CliError> {
    let l = &cfg.lr_opt;
    if l.keypoints < 2 {
        return Err(CliError::Config(format!("a keypoint schedule needs at least 2 keypoints, got {}", l.keypoints)));
    }
    let data = setup::parts(cfg, 3)?;
    let (train, val, test) = (&data[0], &data[1], &data[2]);
    let plan_cfg = PlanConfig::new(cfg.train.batch_size, cfg.train.steps, cfg.seed)
        .slot(MetaSlot::LearningRate(LrParam::Keypoints(l.keypoints)))
        .precision(cfg.precision.into());
    let plan = TrainPlan::new(setup::model(cfg, Preset::Smooth, train), cfg.train.rule(), train.clone(), plan_cfg)?;
    let init = flat_keypoints(l.keypoints, l.init_lr.unwrap_or(cfg.train.lr));
    let lcfg = LrConfig { alpha: l.alpha, rounds: l.rounds, floor: l.floor, tree: setup::tree(cfg, "lr")? };
    let result = optimize_lr_schedule(
        &init,
        &plan,
        &OutputFn::mean_loss(val.clone()),
        Some(&OutputFn::mean_loss(test.clone())),
        &lcfg,
    )?;

    let mut run = RunDir::create(cfg, "lr-opt")?;
    run.write_csv("trajectory.csv", |w| result.write_csv(w))?;
    run.write_csv("keypoints.csv", |w| {
        writeln!(w, "index,initial,final")?;
        for (i, (a, b)) in init.iter().zip(&result.keypoints).enumerate() {
            writeln!(w, "{i},{},{}", fmt(*a), fmt(*b))?;
        }
        Ok(())
    })?;
    run.finish(cfg)
}
