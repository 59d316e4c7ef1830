//! Builds datasets, models and replay options from a resolved configuration.

use std::env;
use std::fs;
use std::path::PathBuf;
use std::sync::Arc;

use metagrad::data::rng::derive_seed;
use metagrad::data::{gen_synthetic, load_idx_or_csv, split, Dataset, Task};
use metagrad::replay::{SpillConfig, TreeOptions};
use metagrad::training::{LossKind, ModelSpec};

use crate::config::{Config, Preset};
use crate::error::CliError;

/// Overrides the directory used for spilled checkpoints.
pub const SCRATCH_ENV: &str = "METAGRAD_SCRATCH_DIR";

pub fn dataset(cfg: &Config) -> Result<Dataset, CliError> {
    let data = &cfg.data;
    Ok(match data.synthetic_kind() {
        Some(kind) => gen_synthetic(kind, data.n, data.noise, derive_seed(cfg.seed, "data"))?,
        None => load_idx_or_csv(data.path.as_ref().expect("validated"))?,
    })
}

/// The configured partition, which must have exactly `parts` pieces.
pub fn parts(cfg: &Config, parts: usize) -> Result<Vec<Arc<Dataset>>, CliError> {
    if cfg.data.split.len() != parts {
        return Err(CliError::Config(format!("this command needs a {parts}-way data.split, got {:?}", cfg.data.split)));
    }
    let ds = dataset(cfg)?;
    let pieces = split(&ds, &cfg.data.split, derive_seed(cfg.seed, "split"))?;
    if let Some(i) = pieces.iter().position(Dataset::is_empty) {
        return Err(CliError::Config(format!("part {i} of the data split is empty")));
    }
    Ok(pieces.into_iter().map(Arc::new).collect())
}

pub fn model(cfg: &Config, preset: Preset, data: &Dataset) -> ModelSpec {
    let mut spec = cfg.model.mlp(preset, data.feature_dim(), data.label_dim());
    if data.task() == Task::Regression {
        spec.loss = LossKind::SquaredError;
    }
    ModelSpec::Mlp(spec)
}

pub fn scratch_dir() -> PathBuf {
    env::var_os(SCRATCH_ENV).map(PathBuf::from).unwrap_or_else(|| env::temp_dir().join("metagrad-scratch"))
}

/// Tree arity from the configuration, spilling to the scratch directory
/// when a memory budget is set. `tag` keeps concurrent runs apart.
pub fn tree(cfg: &Config, tag: &str) -> Result<TreeOptions, CliError> {
    let mut opts = TreeOptions::new(cfg.k);
    if let Some(max_in_memory) = cfg.budget.max_states_in_memory {
        let dir = scratch_dir();
        fs::create_dir_all(&dir)?;
        opts.spill = Some(SpillConfig { max_in_memory, dir, run_id: format!("{}-{tag}", &cfg.hash()[..12]) });
    }
    Ok(opts)
}
