//! Python bindings: synthetic data, replay checks, checkpoint accounting,
//! probe scoring and the command line entry point.

use std::sync::Arc;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use metagrad::data::{gen_synthetic, SyntheticKind};
use metagrad::metasmooth::{smoothness_from_runs, ProbeRun};
use metagrad::replay::check::{compare_with_stepwise, stepwise, traversal_accounting};
use metagrad::replay::TreeOptions;
use metagrad::training::{MetaSlot, MlpSpec, ModelSpec, OutputFn, PlanConfig, TrainPlan, UpdateRule};

fn py_err(e: metagrad::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Two Gaussian clusters as `(features, classes)`.
#[pyfunction]
#[pyo3(signature = (n, dim=2, noise=0.15, seed=0))]
fn two_gaussians(n: usize, dim: usize, noise: f64, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<usize>)> {
    let ds = gen_synthetic(SyntheticKind::TwoGaussians { dim }, n, noise, seed).map_err(py_err)?;
    let rows = ds.features().data().chunks(dim).map(<[f64]>::to_vec).collect();
    let classes = (0..ds.len()).map(|i| ds.class_of(i)).collect();
    Ok((rows, classes))
}

#[pyfunction]
fn live_bound(n: usize, k: usize) -> usize {
    metagrad::replay::live_bound(n, k)
}

#[pyfunction]
fn replay_bound(n: usize, k: usize) -> usize {
    metagrad::replay::replay_bound(n, k)
}

/// Walks a k-ary checkpoint tree over `n` steps and reports its counters.
#[pyfunction]
fn tree_accounting<'py>(py: Python<'py>, n: usize, k: usize) -> PyResult<Bound<'py, PyDict>> {
    if k < 2 || n == 0 {
        return Err(PyValueError::new_err("need n >= 1 and k >= 2"));
    }
    let stats = traversal_accounting(n, k).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("peak_live", stats.peak_live)?;
    d.set_item("forward_steps", stats.forward_steps)?;
    d.set_item("replayed_steps", stats.replayed_steps)?;
    d.set_item("live_bound", metagrad::replay::live_bound(n, k))?;
    d.set_item("replay_bound", metagrad::replay::replay_bound(n, k))?;
    Ok(d)
}

/// Trains a small MLP with SGD on per-sample data weights and compares the
/// replayed metagradient against full stepwise accumulation.
#[pyfunction]
#[pyo3(signature = (steps, k, seed=0, n=64, lr=0.1))]
fn check_replay<'py>(
    py: Python<'py>,
    steps: usize,
    k: usize,
    seed: u64,
    n: usize,
    lr: f64,
) -> PyResult<Bound<'py, PyDict>> {
    if k < 2 {
        return Err(PyValueError::new_err("k must be >= 2"));
    }
    let data = Arc::new(gen_synthetic(SyntheticKind::TwoGaussians { dim: 2 }, n, 0.2, seed).map_err(py_err)?);
    let model = ModelSpec::Mlp(MlpSpec::smooth(2, vec![8], 2));
    let cfg = PlanConfig::new(8, steps, seed).slot(MetaSlot::DataWeights { k: steps / 2, scale: 1.0 });
    let plan = TrainPlan::new(model, UpdateRule::sgd(lr), data.clone(), cfg).map_err(py_err)?;
    let z = plan.default_z();
    let out = OutputFn::mean_loss(data);
    let (cmp, base) = py
        .detach(|| {
            let base = stepwise(&plan, &z, &out)?;
            let cmp = compare_with_stepwise(&plan, &z, &out, &base, &TreeOptions::new(k))?;
            Ok::<_, metagrad::Error>((cmp, base))
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("bit_exact", cmp.bit_exact)?;
    d.set_item("max_abs_diff", cmp.max_abs_diff)?;
    d.set_item("peak_live", cmp.peak_live)?;
    d.set_item("live_bound", cmp.live_bound)?;
    d.set_item("replayed_steps", cmp.replayed_steps)?;
    d.set_item("replay_bound", cmp.replay_bound)?;
    d.set_item("value", base.value)?;
    d.set_item("metagrad", base.metagrad.data().to_vec())?;
    Ok(d)
}

/// Sign agreement of three parameter vectors trained at `z0`, `z0 + h v`
/// and `z0 + 2 h v`. `None` when the parameters did not move.
#[pyfunction]
#[pyo3(signature = (theta0, theta1, theta2, h=0.01))]
fn sign_agreement(theta0: Vec<f64>, theta1: Vec<f64>, theta2: Vec<f64>, h: f64) -> PyResult<Option<f64>> {
    let run = |theta| ProbeRun { theta, output: None };
    let report = smoothness_from_runs(&run(theta0), &run(theta1), &run(theta2), h).map_err(py_err)?;
    Ok(report.s_hat)
}

/// Runs the `metagrad` command line with `args` and returns its exit code.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> u8 {
    let argv: Vec<String> = std::iter::once("metagrad".to_string()).chain(args).collect();
    py.detach(|| metagrad_cli::run(argv))
}

#[pymodule]
fn _native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(two_gaussians, m)?)?;
    m.add_function(wrap_pyfunction!(live_bound, m)?)?;
    m.add_function(wrap_pyfunction!(replay_bound, m)?)?;
    m.add_function(wrap_pyfunction!(tree_accounting, m)?)?;
    m.add_function(wrap_pyfunction!(check_replay, m)?)?;
    m.add_function(wrap_pyfunction!(sign_agreement, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
