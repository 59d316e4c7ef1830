//! Metasmoothness over a grid of model configurations.

use std::path::PathBuf;

use metagrad::metasmooth::{scan_plan, smoothness_scan, write_scan_csv, ScanConfig, ScanSetup};
use metagrad::training::{Activation, NormPlacement, Pooling};

use crate::config::Config;
use crate::error::CliError;
use crate::output::RunDir;
use crate::setup;

fn norm_tag(n: NormPlacement) -> &'static str {
    match n {
        NormPlacement::None => "none",
        NormPlacement::BeforeActivation => "before",
        NormPlacement::AfterActivation => "after",
    }
}

fn act_tag(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Gelu => "gelu",
    }
}

fn pool_tag(p: Pooling) -> &'static str {
    match p {
        Pooling::None => "none",
        Pooling::Average => "avg",
        Pooling::Max => "max",
    }
}

/// Cartesian product of the configured knobs, in a fixed order.
pub fn grid(cfg: &Config) -> Vec<ScanConfig> {
    let s = &cfg.smoothness_scan;
    let mut out = Vec::new();
    for &width in &s.widths {
        for &batch_size in &s.batch_sizes {
            for &norm in &s.norms {
                for &final_scale in &s.final_scales {
                    for &activation in &s.activations {
                        for &pooling in &s.poolings {
                            let id = format!(
                                "w{width}-b{batch_size}-{}-s{final_scale}-{}-{}",
                                norm_tag(norm),
                                act_tag(activation),
                                pool_tag(pooling)
                            );
                            out.push(ScanConfig { id, width, batch_size, norm, final_scale, pooling, activation });
                        }
                    }
                }
            }
        }
    }
    out
}

pub fn run(cfg: &Config) -> Result<PathBuf, CliError> {
    let s = &cfg.smoothness_scan;
    let data = setup::parts(cfg, 3)?;
    let setup = ScanSetup {
        train: data[0].clone(),
        eval: data[1].clone(),
        depth: s.depth,
        steps: cfg.train.steps,
        optimizer: cfg.train.optimizer(cfg.train.optimizer),
        lr: cfg.train.lr,
        n_perturbed: s.n_perturbed,
        probes: s.probes,
        h: s.h,
        seeds: (0..s.seeds as u64).map(|i| cfg.seed.wrapping_add(i)).collect(),
        precision: cfg.precision.into(),
    };
    let grid = grid(cfg);
    // Configuration mistakes shared by every row fail the run instead of
    // filling the table with identical error rows.
    for c in &grid {
        scan_plan(c, &setup, cfg.seed)?;
    }
    let rows = smoothness_scan(&grid, &setup);
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        eprintln!("{failed} of {} scan rows failed; see the error column", rows.len());
    }
    let mut run = RunDir::create(cfg, "smoothness-scan")?;
    run.write_csv("scan.csv", |w| write_scan_csv(&rows, w))?;
    run.finish(cfg)
}
