//! Oracle comparisons shared by the command-line check and the test suites.

use rand_distr::{Distribution, Normal};

use super::metagrad::{metagrad_replay, metagrad_stepwise, MetagradOptions, MetagradReport, TreeOptions};
use super::tree::{live_bound, replay_bound, CheckpointTree, TreeStats};
use crate::autodiff::gradcheck::relative_error;
use crate::data::rng::indexed_stream;
use crate::error::Result;
use crate::tensor::Tensor;
use crate::training::{train, OutputFn, TrainPlan};

/// Replay against stepwise accumulation for one plan and arity.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayComparison {
    pub bit_exact: bool,
    pub max_abs_diff: f64,
    pub peak_live: usize,
    pub live_bound: usize,
    pub replayed_steps: usize,
    pub replay_bound: usize,
    pub replay: MetagradReport,
}

impl ReplayComparison {
    pub fn within_bounds(&self) -> bool {
        self.peak_live <= self.live_bound && self.replayed_steps <= self.replay_bound
    }
}

pub fn compare_with_stepwise(
    plan: &TrainPlan,
    z: &Tensor,
    output: &OutputFn,
    stepwise: &MetagradReport,
    tree: &TreeOptions,
) -> Result<ReplayComparison> {
    let replay = metagrad_replay(plan, z, output, &MetagradOptions::default(), tree)?;
    let max_abs_diff =
        replay.metagrad.data().iter().zip(stepwise.metagrad.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let n = plan.steps() + 1;
    Ok(ReplayComparison {
        bit_exact: replay.metagrad.bit_eq(&stepwise.metagrad) && replay.value.to_bits() == stepwise.value.to_bits(),
        max_abs_diff,
        peak_live: replay.peak_live_states,
        live_bound: live_bound(n, tree.k),
        replayed_steps: replay.replayed_steps,
        replay_bound: replay_bound(n, tree.k),
        replay,
    })
}

/// Stepwise metagradient with default options.
pub fn stepwise(plan: &TrainPlan, z: &Tensor, output: &OutputFn) -> Result<MetagradReport> {
    metagrad_stepwise(plan, z, output, &MetagradOptions::default())
}

/// Unit-norm Gaussian direction, reproducible from `(seed, index)`.
pub fn random_direction(shape: &[usize], seed: u64, index: u64) -> Tensor {
    let mut rng = indexed_stream(seed, "fd-direction", index);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut v = Tensor::zeros(shape);
    for x in v.data_mut() {
        *x = normal.sample(&mut rng);
    }
    let norm = v.norm_l2();
    v.map(|x| x / norm)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionalCheck {
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// `g . v` against `(f(z + hv) - f(z - hv)) / 2h` for `directions` random
/// unit directions. Relative errors use a floor of `1e-8 |g|` so that a
/// direction orthogonal to `g` is judged on absolute scale.
pub fn finite_difference_check(
    plan: &TrainPlan,
    z: &Tensor,
    output: &OutputFn,
    grad: &Tensor,
    directions: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<DirectionalCheck>> {
    let f = |z: &Tensor| -> Result<f64> { output.evaluate(&plan.model, &train(plan, z)?, 0) };
    let floor = 1e-8 * grad.norm_l2();
    (0..directions as u64)
        .map(|i| {
            let v = random_direction(z.shape(), seed, i);
            let numeric = (f(&z.axpy(h, &v)?)? - f(&z.axpy(-h, &v)?)?) / (2.0 * h);
            let analytic = grad.dot(&v);
            Ok(DirectionalCheck { analytic, numeric, rel_err: relative_error(analytic, numeric, floor) })
        })
        .collect()
}

/// Full reverse traversal of `n` states of a one-number counter. The tree
/// fails with [`crate::Error::StorageBound`] the moment the live-state bound
/// is exceeded.
pub fn traversal_accounting(n: usize, k: usize) -> Result<TreeStats> {
    let mut tree = CheckpointTree::new(n, k, 0.0f64, |s: &f64, _| Ok(s + 1.0), true, None)?;
    for item in tree.by_ref() {
        item?;
    }
    Ok(tree.stats())
}
