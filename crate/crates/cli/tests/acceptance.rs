//! Acceptance run: one PASS/FAIL line per criterion, each with its wall time
//! against a budget. Exits nonzero if any criterion fails.

#[path = "../../core/tests/common/battery.rs"]
mod battery;

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use metagrad::apps::{
    constraint_violations, flat_keypoints, lr_grid_search, optimize_lr_schedule, poison_mgd, poison_transfer_eval,
    random_subset_counts, select_data_mgd, LrConfig, PoisonConfig, PoisonProblem, SelectionConfig, SelectionProblem,
};
use metagrad::autodiff::{check_gradient, check_second_order, Precision};
use metagrad::data::{flip_labels, gen_synthetic, split, Dataset, SyntheticKind, Task};
use metagrad::metasmooth::{
    empirical_metasmoothness, metasmoothness_s, smoothness_from_runs, smoothness_scan, ProbeRun, ScanConfig, ScanSetup,
    SmoothnessProbe,
};
use metagrad::replay::check::{compare_with_stepwise, finite_difference_check, stepwise, traversal_accounting};
use metagrad::replay::{live_bound, replay_bound, TreeOptions};
use metagrad::training::{
    LrParam, MetaSlot, MlpSpec, ModelSpec, Optimizer, OutputFn, PlanConfig, TrainPlan, UpdateRule,
};
use metagrad::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Verdict plus a one-line summary of the evidence.
type Outcome = (bool, String);

fn two_gaussians(n: usize, dim: usize, noise: f64, seed: u64) -> Arc<Dataset> {
    Arc::new(gen_synthetic(SyntheticKind::TwoGaussians { dim }, n, noise, seed).unwrap())
}

fn parts(ds: &Dataset, fractions: &[f64], seed: u64) -> Vec<Arc<Dataset>> {
    split(ds, fractions, seed).unwrap().into_iter().map(Arc::new).collect()
}

fn rules() -> Vec<(&'static str, UpdateRule)> {
    vec![
        ("sgd", UpdateRule::sgd(0.1)),
        ("momentum", UpdateRule::new(Optimizer::Momentum { beta: 0.9, nesterov: true }, 0.05)),
        ("adam", UpdateRule::new(Optimizer::Adam { beta1: 0.9, beta2: 0.99, eps: 1e-8, eps_root: 1e-8 }, 0.01)),
    ]
}

fn variants(steps: usize) -> Vec<(&'static str, MetaSlot)> {
    vec![
        ("data-weights", MetaSlot::DataWeights { k: steps / 2, scale: 1.0 }),
        ("sample-perturbation", MetaSlot::SamplePerturbation { n_p: 4 }),
        ("lr-keypoints", MetaSlot::LearningRate(LrParam::Keypoints(3))),
    ]
}

fn oracle_equivalence() -> Outcome {
    let data = two_gaussians(64, 2, 0.2, 1);
    let out = OutputFn::mean_loss(two_gaussians(32, 2, 0.2, 2));
    let model = ModelSpec::Mlp(MlpSpec::smooth(2, vec![8], 2));
    let (mut cases, mut exact) = (0, 0);
    let mut first_miss = String::new();
    for (rn, rule) in rules() {
        for steps in [4, 16, 50] {
            for (vn, slot) in variants(steps) {
                let plan =
                    TrainPlan::new(model.clone(), rule, data.clone(), PlanConfig::new(8, steps, 0).slot(slot)).unwrap();
                let z = plan.default_z();
                let base = stepwise(&plan, &z, &out).unwrap();
                for k in [2, 3, 5] {
                    let cmp = compare_with_stepwise(&plan, &z, &out, &base, &TreeOptions::new(k)).unwrap();
                    cases += 1;
                    if cmp.bit_exact {
                        exact += 1;
                    } else if first_miss.is_empty() {
                        first_miss = format!("; first mismatch {rn}/{vn}/T={steps}/k={k}");
                    }
                }
            }
        }
    }
    (exact == cases, format!("{exact}/{cases} bit-exact{first_miss}"))
}

fn finite_differences() -> Outcome {
    let data = two_gaussians(128, 8, 0.2, 5);
    let out = OutputFn::mean_loss(data.clone());
    let model = ModelSpec::Mlp(MlpSpec::smooth(8, vec![64, 32], 2));
    let params = metagrad::training::model::param_count(&model.init_from_seed(0));
    let mut worst: BTreeMap<&str, f64> = BTreeMap::new();
    for (_, rule) in rules() {
        for (vn, slot) in variants(32) {
            let plan =
                TrainPlan::new(model.clone(), rule, data.clone(), PlanConfig::new(16, 32, 1).slot(slot)).unwrap();
            let z = plan.default_z();
            let g = stepwise(&plan, &z, &out).unwrap();
            let checks = finite_difference_check(&plan, &z, &out, &g.metagrad, 10, 1e-4, 7).unwrap();
            let e = checks.iter().map(|c| c.rel_err).fold(0.0, f64::max);
            let w = worst.entry(vn).or_insert(0.0);
            *w = w.max(e);
        }
    }
    let ok = worst.values().all(|&e| e <= 1e-4);
    let detail: Vec<String> = worst.iter().map(|(v, e)| format!("{v} {e:.2e}")).collect();
    (ok, format!("{params} params, T=32, max rel err: {}", detail.join(", ")))
}

fn replay_accounting() -> Outcome {
    let (mut cases, mut ok) = (0, 0);
    let mut worst_live = 0.0f64;
    let mut worst_replay = 0.0f64;
    for n in [8, 27, 81, 256, 1024] {
        for k in [2, 3, 4, 8] {
            cases += 1;
            // The traversal errors out the moment the live bound is exceeded.
            if let Ok(s) = traversal_accounting(n, k) {
                if s.peak_live <= live_bound(n, k) && s.replayed_steps <= replay_bound(n, k) {
                    ok += 1;
                }
                worst_live = worst_live.max(s.peak_live as f64 / live_bound(n, k) as f64);
                worst_replay = worst_replay.max(s.replayed_steps as f64 / replay_bound(n, k) as f64);
            }
        }
    }
    (
        ok == cases,
        format!("{ok}/{cases} sweeps within bounds; max live/bound {worst_live:.2}, replayed/bound {worst_replay:.2}"),
    )
}

fn piecewise_linear(z: f64, slopes: &[f64], breaks: &[f64]) -> f64 {
    slopes.iter().zip(breaks).map(|(s, b)| s * (z - b).max(0.0)).sum()
}

fn probe(z: f64, h: f64) -> SmoothnessProbe {
    SmoothnessProbe::new(Tensor::vector(vec![z]), Tensor::vector(vec![1.0]), Some(h)).unwrap()
}

fn metric_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut failures = Vec::new();
    // Dyadic quadratics: second differences are exact.
    for &a in &[0.5, 1.0, 3.0, -2.0] {
        for &z in &[0.0, 0.75, -1.5] {
            for &h in &[0.5, 0.125, 1.0 / 64.0] {
                let f = |x: &Tensor| Ok(a * x.data()[0] * x.data()[0] + 0.25 * x.data()[0]);
                if metasmoothness_s(f, &probe(z, h)).unwrap() != (2.0 * a).abs() {
                    failures.push(format!("S({a}, {z}, {h})"));
                }
            }
        }
    }
    for i in 0..200 {
        let m: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..2.0) * if rng.random() { 1.0 } else { -1.0 }).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let algo = |x: &Tensor| {
            Ok(ProbeRun { theta: m.iter().zip(&b).map(|(m, b)| m * x.data()[0] + b).collect(), output: None })
        };
        let p = probe(rng.random_range(-5.0..5.0), rng.random_range(1e-4..1.0));
        if empirical_metasmoothness(algo, &p).unwrap().s_hat != Some(1.0) {
            failures.push(format!("linear #{i}"));
        }
    }
    let mut degenerate_seen = 0;
    for i in 0..1000 {
        let pieces = rng.random_range(1..6);
        let slopes: Vec<f64> = (0..pieces).map(|_| rng.random_range(-3.0..3.0)).collect();
        let breaks: Vec<f64> = (0..pieces).map(|_| rng.random_range(-1.0..1.0)).collect();
        let outs = rng.random_range(1..5);
        let algo = |x: &Tensor| {
            let z = x.data()[0];
            Ok(ProbeRun {
                theta: (0..outs).map(|j| piecewise_linear(z + j as f64 * 0.1, &slopes, &breaks)).collect(),
                output: None,
            })
        };
        let r =
            empirical_metasmoothness(algo, &probe(rng.random_range(-1.0..1.0), rng.random_range(1e-3..0.5))).unwrap();
        degenerate_seen += r.degenerate as usize;
        let bounded = r.s_hat.is_none_or(|s| (-1.0..=1.0).contains(&s));
        if !bounded || r.degenerate != (r.d_l1 == 0.0) || r.s_hat.is_none() != r.degenerate {
            failures.push(format!("piecewise #{i}"));
        }
    }
    let still = ProbeRun { theta: vec![0.5, -1.0], output: None };
    let moved = ProbeRun { theta: vec![0.5, -0.75], output: None };
    let d0 = smoothness_from_runs(&still, &still, &still, 0.1).unwrap();
    let d1 = smoothness_from_runs(&still, &moved, &moved, 0.1).unwrap();
    if !d0.degenerate || d1.degenerate {
        failures.push("degenerate flag".into());
    }
    (
        failures.is_empty(),
        format!(
            "36 quadratics, 200 linear, 1000 piecewise-linear ({degenerate_seen} degenerate); failures: {}",
            if failures.is_empty() { "none".to_string() } else { failures[..failures.len().min(3)].join(", ") }
        ),
    )
}

fn smoothness_ordering() -> Outcome {
    let setup = ScanSetup {
        train: two_gaussians(64, 4, 0.15, 11),
        eval: two_gaussians(64, 4, 0.15, 12),
        depth: 1,
        steps: 32,
        optimizer: Optimizer::Sgd,
        lr: 0.2,
        n_perturbed: 8,
        probes: 2,
        h: None,
        seeds: (0..5).collect(),
        precision: Precision::F64,
    };
    let grid = vec![
        ScanConfig::smooth("s8", 8, 16),
        ScanConfig::smooth("s16", 16, 16),
        ScanConfig::standard("n8", 8, 16),
        ScanConfig::standard("n16", 16, 16),
    ];
    let rows = smoothness_scan(&grid, &setup);
    let errors = rows.iter().filter(|r| r.error.is_some()).count();
    let mut wins = 0;
    let mut means = Vec::new();
    for seed in 0..5 {
        let mean = |smooth: bool| {
            let v: Vec<f64> = rows
                .iter()
                .filter(|r| r.seed == seed && r.config.is_smooth_group() == smooth)
                .filter_map(|r| r.s_hat)
                .collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        if let (Some(s), Some(n)) = (mean(true), mean(false)) {
            wins += (s > n) as usize;
            means.push(format!("{s:.2}>{n:.2}"));
        }
    }
    (wins == 5 && errors == 0, format!("smooth > standard in {wins}/5 seeds [{}]", means.join(" ")))
}

fn poisoning() -> Outcome {
    let (mut above, mut transfer, mut violations) = (0, 0, 0);
    for seed in 0..5u64 {
        let all = two_gaussians(400, 2, 0.15, 100 + seed);
        let p = parts(&all, &[0.5, 0.25, 0.25], seed);
        let problem = |spec: MlpSpec| PoisonProblem {
            model: ModelSpec::Mlp(spec),
            rule: UpdateRule::sgd(1.0),
            train: p[0].clone(),
            batch_size: 16,
            steps: 40,
            precision: Precision::F64,
        };
        let smooth = problem(MlpSpec::smooth(2, vec![8], 2));
        let cfg = PoisonConfig { epsilon: 0.025, eta: 0.1, rounds: 50, seed, ..Default::default() };
        let res = poison_mgd(&smooth, p[1].clone(), &cfg).unwrap();
        violations += res.trajectory.iter().map(|r| r.constraint_violations).sum::<usize>();
        violations += constraint_violations(&res.poisons, 2, true, 1e-9);
        let held = poison_transfer_eval(&res.poisons, &smooth, &p[2], &[seed]).unwrap();
        above += (held.per_seed[0].loss_delta() > 0.0) as usize;
        let std =
            poison_transfer_eval(&res.poisons, &problem(MlpSpec::standard(2, vec![8], 2)), &p[2], &[seed]).unwrap();
        transfer += (std.per_seed[0].loss_delta() > 0.0) as usize;
    }
    (
        above >= 4 && transfer >= 3 && violations == 0,
        format!("held-out loss up in {above}/5, transfer degraded in {transfer}/5, constraint violations {violations}"),
    )
}

fn selection() -> Outcome {
    let (mut beat, mut monotone) = (0, 0);
    for seed in 0..5u64 {
        let all = two_gaussians(800, 2, 0.12, 200 + seed);
        let p = parts(&all, &[0.5, 0.25, 0.25], seed);
        let (pool, flipped) = flip_labels(&p[0], 0.1, seed).unwrap();
        let problem = SelectionProblem {
            model: ModelSpec::Mlp(MlpSpec::smooth(2, vec![8], 2)),
            rule: UpdateRule::sgd(1.0),
            pool: Arc::new(pool),
            batch_size: 16,
            steps: 40,
            seed,
            precision: Precision::F64,
        };
        let cfg = SelectionConfig { p: 0.25, rounds: 10, seed, ..Default::default() };
        let res = select_data_mgd(&problem, p[1].clone(), p[2].clone(), &cfg).unwrap();
        let means: Vec<f64> = res
            .trajectory
            .iter()
            .map(|r| flipped.iter().map(|&i| r.counts[i] as f64).sum::<f64>() / flipped.len() as f64)
            .collect();
        monotone += means[..6].windows(2).all(|w| w[1] < w[0]) as usize;
        let size: usize = res.counts.iter().sum();
        let target = OutputFn::mean_loss(p[1].clone());
        let mgd = problem.evaluate(&res.counts, &target).unwrap();
        let rnd = problem.evaluate(&random_subset_counts(problem.pool.len(), size, seed), &target).unwrap();
        beat += (mgd < rnd) as usize;
    }
    (
        beat >= 4 && monotone >= 4,
        format!("beats random in {beat}/5, flipped counts strictly falling over rounds 0-5 in {monotone}/5"),
    )
}

fn points(xs: &[f64], dim: usize) -> Arc<Dataset> {
    let f = Tensor::new(vec![xs.len() / dim, dim], xs.to_vec()).unwrap();
    let l = Tensor::zeros(&[xs.len() / dim, 1]);
    Arc::new(Dataset::new(f, l, Task::Regression, "points", 0).unwrap())
}

fn lr_schedule() -> Outcome {
    let mut gaps = Vec::new();
    let quadratics = [
        (vec![1.0], vec![0.0], points(&[0.5, 0.3, 0.7, 0.5], 1), points(&[0.5], 1), 0.05, 0.02),
        (
            vec![1.0, 0.25],
            vec![0.0, 1.0],
            points(&[0.5, 0.2, 0.3, 0.4, 0.7, 0.1, 0.5, 0.3], 2),
            points(&[0.5, 0.25], 2),
            0.05,
            0.02,
        ),
    ];
    for (curvature, init, data, target, flat, alpha) in quadratics {
        let model = ModelSpec::Quadratic { curvature, init };
        let cfg = PlanConfig::new(1, 8, 0).slot(MetaSlot::LearningRate(LrParam::Keypoints(2)));
        let plan = TrainPlan::new(model, UpdateRule::sgd(flat), data, cfg).unwrap();
        let out = OutputFn::mean_loss(target);
        let lr = LrConfig { alpha, rounds: 80, ..Default::default() };
        let res = optimize_lr_schedule(&flat_keypoints(2, flat), &plan, &out, None, &lr).unwrap();
        let grid: Vec<Vec<f64>> =
            (1..=10).flat_map(|a| (1..=10).map(move |b| vec![a as f64 * 0.1, b as f64 * 0.1])).collect();
        let (_, best) = lr_grid_search(&plan, &out, &grid).unwrap();
        gaps.push(res.final_target() - best);
    }
    let mut improved = 0;
    for seed in 0..5u64 {
        let all = two_gaussians(200, 2, 0.12, 300 + seed);
        let p = parts(&all, &[0.5, 0.5], seed);
        let model = ModelSpec::Mlp(MlpSpec::smooth(2, vec![8], 2));
        let cfg = PlanConfig::new(16, 24, seed).slot(MetaSlot::LearningRate(LrParam::Keypoints(3)));
        let plan = TrainPlan::new(model, UpdateRule::sgd(0.1), p[0].clone(), cfg).unwrap();
        let out = OutputFn::mean_loss(p[1].clone());
        let lr = LrConfig { alpha: 0.05, rounds: 20, ..Default::default() };
        let res = optimize_lr_schedule(&flat_keypoints(3, 0.1), &plan, &out, None, &lr).unwrap();
        improved += (res.final_target() < res.trajectory[0].target) as usize;
    }
    let close = gaps.iter().all(|&g| g <= 1e-3);
    let gap_text: Vec<String> = gaps.iter().map(|g| format!("{g:.2e}")).collect();
    (
        close && improved == 5,
        format!("quadratic gap to grid optimum [{}] (<= 1e-3), MLP improved in {improved}/5", gap_text.join(", ")),
    )
}

fn gradient_battery() -> Outcome {
    let (mut first, mut second) = (0.0f64, 0.0f64);
    let mut failed = Vec::new();
    let all = battery::battery();
    for (name, f, x) in &all {
        let r1 = check_gradient(f, x, 1e-5).unwrap().max_rel_err;
        let r2 = check_second_order(f, x, 1e-4).unwrap().max_rel_err;
        if r1 > 1e-6 || r2 > 1e-5 {
            failed.push(*name);
        }
        first = first.max(r1);
        second = second.max(r2);
    }
    (
        failed.is_empty(),
        format!(
            "{} primitives, worst first-order {first:.1e}, second-order {second:.1e}; failed {failed:?}",
            all.len()
        ),
    )
}

const CLI_CONFIG: &str = r#"
seed = 11

[data]
n = 120

[train]
batch_size = 8
steps = 12

[metagrad_check]
steps = [8]
ks = [2, 3]
directions = 3

[smoothness_scan]
widths = [8]
batch_sizes = [8]
seeds = 2
probes = 2
n_perturbed = 4

[select_data]
rounds = 3

[poison]
epsilon = 0.05
rounds = 3
transfer_seeds = 2

[lr_opt]
rounds = 3

[bench_replay]
ns = [8, 27, 81]
ks = [2, 3]
"#;

fn cli_csvs(cmd: &str, config: &Path, out: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_metagrad"))
        .args([cmd, "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()])
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{cmd} exited with {:?}", o.status.code()));
    }
    let dir = PathBuf::from(String::from_utf8_lossy(&o.stdout).trim());
    Ok(fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv") && !p.ends_with("timing.csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect())
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    fs::write(&config, CLI_CONFIG).unwrap();
    let mut same = 0;
    let mut files = 0;
    let mut notes = Vec::new();
    let commands = ["metagrad-check", "smoothness-scan", "select-data", "poison", "lr-opt", "bench-replay"];
    for cmd in commands {
        match (cli_csvs(cmd, &config, &tmp.path().join("a")), cli_csvs(cmd, &config, &tmp.path().join("b"))) {
            (Ok(a), Ok(b)) if !a.is_empty() && a == b => {
                same += 1;
                files += a.len();
            }
            (Err(e), _) | (_, Err(e)) => notes.push(e),
            _ => notes.push(format!("{cmd} differs")),
        }
    }
    (
        same == commands.len(),
        format!(
            "{same}/{} subcommands byte-identical across reruns ({files} CSVs){}",
            commands.len(),
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    )
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mins = |m: u64| Duration::from_secs(60 * m);
    let criteria = [
        Criterion { id: 1, name: "oracle equivalence", budget: mins(5), run: oracle_equivalence },
        Criterion { id: 2, name: "finite-difference agreement", budget: mins(10), run: finite_differences },
        Criterion { id: 3, name: "replay accounting", budget: mins(5), run: replay_accounting },
        Criterion { id: 4, name: "metasmoothness metric", budget: mins(2), run: metric_correctness },
        Criterion { id: 5, name: "smooth vs non-smooth ordering", budget: mins(15), run: smoothness_ordering },
        Criterion { id: 6, name: "poisoning efficacy", budget: mins(30), run: poisoning },
        Criterion { id: 7, name: "selection efficacy", budget: mins(30), run: selection },
        Criterion { id: 8, name: "learning-rate schedule", budget: mins(20), run: lr_schedule },
        Criterion { id: 9, name: "gradient checker battery", budget: mins(2), run: gradient_battery },
        Criterion { id: 10, name: "CLI determinism", budget: mins(10), run: cli_determinism },
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let (ok, detail) = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            (false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let pass = ok && elapsed <= c.budget;
        failed += !pass as usize;
        println!(
            "criterion {} {}: {} ({detail}) [{:.1}s / {}s]",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.budget.as_secs()
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
