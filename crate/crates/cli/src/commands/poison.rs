//! Accuracy-degrading poisoning of a fixed fraction of the training set.

use std::path::PathBuf;

use metagrad::apps::{poison_mgd, poison_transfer_eval, PoisonConfig, PoisonProblem};
use metagrad::snapshot::Snapshot;

use crate::config::{Config, Preset};
use crate::error::CliError;
use crate::output::RunDir;
use crate::setup;

pub fn run(cfg: &Config) -> Result<PathBuf, CliError> {
    let p = &cfg.poison;
    let data = setup::parts(cfg, 3)?;
    let (train, val, test) = (&data[0], &data[1], &data[2]);
    let problem = |preset| PoisonProblem {
        model: setup::model(cfg, preset, train),
        rule: cfg.train.rule(),
        train: train.clone(),
        batch_size: cfg.train.batch_size,
        steps: cfg.train.steps,
        precision: cfg.precision.into(),
    };
    let pcfg = PoisonConfig {
        epsilon: p.epsilon,
        eta: p.eta,
        rounds: p.rounds,
        val_fraction: p.val_fraction,
        seed: cfg.seed,
        fresh_seed_per_round: p.fresh_seed_per_round,
        tree: setup::tree(cfg, "poison")?,
    };
    let smooth = problem(Preset::Smooth);
    let result = poison_mgd(&smooth, val.clone(), &pcfg)?;
    let seeds: Vec<u64> = (0..p.transfer_seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let heldout = poison_transfer_eval(&result.poisons, &smooth, test, &seeds)?;
    let transfer = poison_transfer_eval(&result.poisons, &problem(Preset::Standard), test, &seeds)?;

    let mut run = RunDir::create(cfg, "poison")?;
    run.write_csv("trajectory.csv", |w| result.write_csv(w))?;
    run.write_csv("heldout.csv", |w| heldout.write_csv(w))?;
    run.write_csv("transfer.csv", |w| transfer.write_csv(w))?;
    let snap = Snapshot { tensors: vec![("poisons".into(), result.poisons.clone())], ..Default::default() };
    run.write_snapshot("poisons.snap", snap)?;
    run.finish(cfg)
}
