//! Data selection on a pool with flipped labels.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use metagrad::apps::{random_subset_counts, select_data_mgd, SelectionConfig, SelectionProblem};
use metagrad::data::flip_labels;
use metagrad::data::rng::derive_seed;
use metagrad::training::{train, MetaSlot, OutputFn};
use metagrad::Tensor;

use super::fmt;
use crate::config::{Config, Preset};
use crate::error::CliError;
use crate::output::RunDir;
use crate::setup;

pub fn run(cfg: &Config) -> Result<PathBuf, CliError> {
    let s = &cfg.select_data;
    let data = setup::parts(cfg, 3)?;
    let (pool, flipped) = flip_labels(&data[0], s.flip_rate, derive_seed(cfg.seed, "flip"))?;
    let pool = Arc::new(pool);
    let (target, val) = (data[1].clone(), data[2].clone());
    let problem = SelectionProblem {
        model: setup::model(cfg, Preset::Smooth, &pool),
        rule: cfg.train.rule(),
        pool: pool.clone(),
        batch_size: cfg.train.batch_size,
        steps: cfg.train.steps,
        seed: cfg.seed,
        precision: cfg.precision.into(),
    };
    let sel = SelectionConfig {
        p: s.p,
        rounds: s.rounds,
        surrogate_step: s.surrogate_step,
        surrogate_scale: s.surrogate_scale,
        eval_fraction: s.eval_fraction,
        fixed_size: s.fixed_size,
        init_counts: None,
        seed: cfg.seed,
        tree: setup::tree(cfg, "select")?,
    };
    let result = select_data_mgd(&problem, target.clone(), val.clone(), &sel)?;

    let size: usize = result.counts.iter().sum();
    let random = random_subset_counts(pool.len(), size, derive_seed(cfg.seed, "random-baseline"));
    let target_out = OutputFn::mean_loss(target);
    let val_out = OutputFn::mean_loss(val);
    let mut summary = Vec::new();
    for (name, counts) in [("mgd", &result.counts), ("random", &random)] {
        summary.push((name, problem.evaluate(counts, &target_out)?, problem.evaluate(counts, &val_out)?));
    }
    let plan = problem.plan(&result.counts, MetaSlot::None)?;
    let state = train(&plan, &Tensor::zeros(&plan.z_shape()))?;

    let is_flipped = |i: usize| flipped.binary_search(&i).is_ok();
    let mut run = RunDir::create(cfg, "select-data")?;
    run.write_csv("trajectory.csv", |w| result.write_csv(w))?;
    run.write_csv("flipped.csv", |w| {
        writeln!(w, "round,flipped_mean_count,clean_mean_count")?;
        for r in &result.trajectory {
            let mean = |want: bool| {
                let (sum, n) = r
                    .counts
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| is_flipped(*i) == want)
                    .fold((0usize, 0usize), |(s, n), (_, &c)| (s + c, n + 1));
                if n == 0 {
                    f64::NAN
                } else {
                    sum as f64 / n as f64
                }
            };
            writeln!(w, "{},{},{}", r.round, fmt(mean(true)), fmt(mean(false)))?;
        }
        Ok(())
    })?;
    run.write_csv("counts.csv", |w| {
        writeln!(w, "index,count,flipped")?;
        for (i, c) in result.counts.iter().enumerate() {
            writeln!(w, "{i},{c},{}", is_flipped(i))?;
        }
        Ok(())
    })?;
    run.write_csv("summary.csv", |w| {
        writeln!(w, "method,selected_size,target_metric,val_metric,best_round")?;
        for (name, t, v) in &summary {
            let best = if *name == "mgd" { result.best_round.to_string() } else { String::new() };
            writeln!(w, "{name},{size},{},{},{best}", fmt(*t), fmt(*v))?;
        }
        Ok(())
    })?;
    run.write_snapshot("model.snap", state.to_snapshot())?;
    run.finish(cfg)
}
