#![allow(dead_code)]

pub mod battery;

use std::sync::Arc;

use metagrad::data::{Dataset, Task};
use metagrad::training::{
    LrParam, MetaSlot, MlpSpec, ModelSpec, Optimizer, OutputFn, OutputKind, PlanConfig, TrainPlan, UpdateRule,
};
use metagrad::Tensor;

/// `n` samples at feature value `target` in one dimension.
pub fn constant_targets(n: usize, target: f64) -> Arc<Dataset> {
    let f = Tensor::new(vec![n, 1], vec![target; n]).unwrap();
    let l = Tensor::new(vec![n, 1], vec![0.0; n]).unwrap();
    Arc::new(Dataset::new(f, l, Task::Regression, "const", 0).unwrap())
}

/// One-dimensional `0.5 (theta - 1)^2` training with batch 1.
pub fn scalar_quadratic_plan(steps: usize, slot: MetaSlot, rule: UpdateRule) -> TrainPlan {
    let model = ModelSpec::Quadratic { curvature: vec![1.0], init: vec![0.0] };
    TrainPlan::new(model, rule, constant_targets(4, 1.0), PlanConfig::new(1, steps, 0).slot(slot)).unwrap()
}

pub fn param_output(data: Arc<Dataset>) -> OutputFn {
    OutputFn::new(OutputKind::Param { name: "theta".into(), index: 0 }, data)
}

pub fn rules() -> Vec<(&'static str, UpdateRule)> {
    vec![
        ("sgd", UpdateRule::sgd(0.1)),
        ("momentum", UpdateRule::new(Optimizer::Momentum { beta: 0.9, nesterov: true }, 0.05)),
        ("adam", UpdateRule::new(Optimizer::Adam { beta1: 0.9, beta2: 0.99, eps: 1e-8, eps_root: 1e-8 }, 0.01)),
    ]
}

pub fn two_gaussians(n: usize, dim: usize, noise: f64, seed: u64) -> Arc<Dataset> {
    Arc::new(
        metagrad::data::gen_synthetic(metagrad::data::SyntheticKind::TwoGaussians { dim }, n, noise, seed).unwrap(),
    )
}

pub fn small_mlp(dim: usize) -> ModelSpec {
    ModelSpec::Mlp(MlpSpec::smooth(dim, vec![8], 2))
}

pub fn lr_slot(k: usize) -> MetaSlot {
    MetaSlot::LearningRate(LrParam::Keypoints(k))
}
