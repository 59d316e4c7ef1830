//! Checkpoint-tree accounting over a sweep of lengths and arities, on a
//! one-number state so that only the bookkeeping is measured.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use metagrad::replay::check::traversal_accounting;
use metagrad::replay::{live_bound, replay_bound, tree_depth, TreeStats};

use crate::config::Config;
use crate::error::CliError;
use crate::output::RunDir;

struct Row {
    n: usize,
    k: usize,
    stats: TreeStats,
    secs: f64,
}

impl Row {
    fn bounds_ok(&self) -> bool {
        self.stats.peak_live <= live_bound(self.n, self.k) && self.stats.replayed_steps <= replay_bound(self.n, self.k)
    }
}

pub fn run(cfg: &Config) -> Result<PathBuf, CliError> {
    let b = &cfg.bench_replay;
    if let Some(&k) = b.ks.iter().find(|&&k| k < 2) {
        return Err(CliError::Config(format!("tree arity must be >= 2, got {k}")));
    }
    if b.ns.contains(&0) {
        return Err(CliError::Config("every n must be >= 1".into()));
    }
    let mut rows = Vec::new();
    for &n in &b.ns {
        for &k in &b.ks {
            let start = Instant::now();
            let stats = traversal_accounting(n, k)?;
            rows.push(Row { n, k, stats, secs: start.elapsed().as_secs_f64() });
        }
    }
    let mut run = RunDir::create(cfg, "bench-replay")?;
    run.write_csv("bench.csv", |w| {
        writeln!(w, "n,k,depth,peak_states,live_bound,forward_steps,replayed_steps,replay_bound,bounds_ok")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.n,
                r.k,
                tree_depth(r.n, r.k),
                r.stats.peak_live,
                live_bound(r.n, r.k),
                r.stats.forward_steps,
                r.stats.replayed_steps,
                replay_bound(r.n, r.k),
                r.bounds_ok()
            )?;
        }
        Ok(())
    })?;
    run.write_volatile_csv("timing.csv", |w| {
        writeln!(w, "n,k,wall_time_s")?;
        for r in &rows {
            writeln!(w, "{},{},{:.6}", r.n, r.k, r.secs)?;
        }
        Ok(())
    })?;
    let dir = run.finish(cfg)?;
    let failed = rows.iter().filter(|r| !r.bounds_ok()).count();
    if failed > 0 {
        return Err(CliError::Tolerance(format!("{failed} sweep rows exceed the accounting bounds")));
    }
    Ok(dir)
}
