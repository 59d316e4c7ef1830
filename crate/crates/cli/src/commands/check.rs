//! Replay against stepwise accumulation and finite differences.

use std::io::Write;
use std::path::PathBuf;

use metagrad::replay::check::{compare_with_stepwise, finite_difference_check, stepwise};
use metagrad::replay::{metagrad_replay_with, MetagradOptions, TreeOptions};
use metagrad::training::{step, LrParam, MetaSlot, OutputFn, PlanConfig, TrainPlan};
use metagrad::Tensor;

use super::{fmt, Fault};
use crate::config::{Config, Preset, Variant};
use crate::error::CliError;
use crate::output::RunDir;
use crate::setup;

struct Row {
    rule: String,
    variant: Variant,
    steps: usize,
    k: usize,
    bit_exact: bool,
    max_abs_diff: f64,
    fd_max_rel_err: Option<f64>,
    peak_live: usize,
    live_bound: usize,
    replayed: usize,
    replay_bound: usize,
    bounds_ok: bool,
    pass: bool,
}

const COLUMNS: &str = "rule,variant,steps,k,bit_exact,max_abs_diff,fd_max_rel_err,peak_live_states,live_bound,\
replayed_steps,replay_bound,bounds_ok,pass";

fn slot(cfg: &Config, variant: Variant, steps: usize) -> MetaSlot {
    let c = &cfg.metagrad_check;
    match variant {
        Variant::DataWeights => MetaSlot::DataWeights { k: steps / 2, scale: 1.0 },
        Variant::SamplePerturbation => MetaSlot::SamplePerturbation { n_p: c.n_perturbed },
        Variant::LrKeypoints => MetaSlot::LearningRate(LrParam::Keypoints(c.keypoints)),
    }
}

/// Replay whose re-executed steps nudge one parameter, which the digest
/// check must catch.
fn faulty_replay(plan: &TrainPlan, z: &Tensor, out: &OutputFn, tree: &TreeOptions) -> Result<(), CliError> {
    let mut calls = 0usize;
    metagrad_replay_with(plan, z, out, &MetagradOptions::default(), tree, |s| {
        calls += 1;
        let mut next = step(plan, s, z)?;
        if calls > plan.steps() {
            if let Some(p) = next.params.values_mut().next() {
                p.data_mut()[0] += 1e-9;
            }
        }
        Ok(next)
    })?;
    Ok(())
}

pub fn run(cfg: &Config, fault: Option<Fault>) -> Result<PathBuf, CliError> {
    let c = &cfg.metagrad_check;
    if c.ks.iter().any(|&k| k < 2) {
        return Err(CliError::Config("every k must be >= 2".into()));
    }
    let data = setup::parts(cfg, 3)?;
    let (train, val) = (&data[0], &data[1]);
    let model = setup::model(cfg, Preset::Smooth, train);
    let out = OutputFn::mean_loss(val.clone());
    let mut rows = Vec::new();
    for spec in &c.rules {
        let rule = cfg.train.rule_with(spec.optimizer, spec.lr);
        let rule_name = format!("{}@{}", spec.optimizer.name(), spec.lr);
        for &variant in &c.variants {
            for &steps in &c.steps {
                let plan_cfg = PlanConfig::new(cfg.train.batch_size, steps, cfg.seed)
                    .slot(slot(cfg, variant, steps))
                    .precision(cfg.precision.into());
                let plan = TrainPlan::new(model.clone(), rule, train.clone(), plan_cfg)?;
                let z = plan.default_z();
                if fault == Some(Fault::Replay) {
                    faulty_replay(&plan, &z, &out, &TreeOptions::new(2))?;
                }
                let base = stepwise(&plan, &z, &out)?;
                let fd = if c.directions > 0 {
                    let checks = finite_difference_check(&plan, &z, &out, &base.metagrad, c.directions, c.h, cfg.seed)?;
                    Some(checks.iter().map(|d| d.rel_err).fold(0.0, f64::max))
                } else {
                    None
                };
                for &k in &c.ks {
                    let tree = TreeOptions { k, ..setup::tree(cfg, &format!("check-{k}"))? };
                    let cmp = compare_with_stepwise(&plan, &z, &out, &base, &tree)?;
                    let bounds_ok = cmp.within_bounds();
                    let fd_ok = fd.is_none_or(|e| e <= c.tolerance);
                    rows.push(Row {
                        rule: rule_name.clone(),
                        variant,
                        steps,
                        k,
                        bit_exact: cmp.bit_exact,
                        max_abs_diff: cmp.max_abs_diff,
                        fd_max_rel_err: fd,
                        peak_live: cmp.peak_live,
                        live_bound: cmp.live_bound,
                        replayed: cmp.replayed_steps,
                        replay_bound: cmp.replay_bound,
                        bounds_ok,
                        pass: cmp.bit_exact && bounds_ok && fd_ok,
                    });
                }
            }
        }
    }
    let mut run = RunDir::create(cfg, "metagrad-check")?;
    run.write_csv("report.csv", |w| {
        writeln!(w, "{COLUMNS}")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.rule,
                r.variant.name(),
                r.steps,
                r.k,
                r.bit_exact,
                fmt(r.max_abs_diff),
                r.fd_max_rel_err.map(fmt).unwrap_or_default(),
                r.peak_live,
                r.live_bound,
                r.replayed,
                r.replay_bound,
                r.bounds_ok,
                r.pass
            )?;
        }
        Ok(())
    })?;
    let dir = run.finish(cfg)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    if failed > 0 {
        return Err(CliError::Tolerance(format!("{failed} of {} checks failed; see {}", rows.len(), dir.display())));
    }
    Ok(dir)
}
