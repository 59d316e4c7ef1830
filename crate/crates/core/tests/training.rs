mod common;

use std::sync::Arc;

use common::*;
use metagrad::data::rng::stream;
use metagrad::training::{
    deterministic_batches, step, step_vjp, train, train_from, LrParam, MetaSlot, ModelSpec, Optimizer, OptimizerState,
    OutputFn, OutputKind, PlanConfig, StateCotangent, TrainPlan, UpdateRule,
};
use metagrad::Tensor;
use rand::Rng;

#[test]
fn sgd_single_step_closed_form() {
    let plan = scalar_quadratic_plan(1, MetaSlot::None, UpdateRule::sgd(0.5));
    let s1 = step(&plan, &plan.init_state(), &plan.default_z()).unwrap();
    assert_eq!(s1.params["theta"].data(), &[0.5]);
    assert_eq!(s1.t, 1);
}

#[test]
fn two_steps_of_constant_lr_give_two_z_minus_z_squared() {
    let plan = scalar_quadratic_plan(2, MetaSlot::LearningRate(LrParam::Constant), UpdateRule::sgd(0.1));
    for z in [0.1, 0.5, 0.9, 1.3] {
        let s = train(&plan, &Tensor::vector(vec![z])).unwrap();
        assert_eq!(s.params["theta"].item(), 2.0 * z - z * z);
    }
}

#[test]
fn per_step_lr_matches_worked_form() {
    let plan = scalar_quadratic_plan(3, MetaSlot::LearningRate(LrParam::PerStep), UpdateRule::sgd(0.1));
    let z = [0.3, 0.7, 0.2];
    let s = train(&plan, &Tensor::vector(z.to_vec())).unwrap();
    let mut theta = 0.0;
    for lr in z {
        theta -= lr * (theta - 1.0);
    }
    assert_eq!(s.params["theta"].item(), theta);
}

#[test]
fn adam_first_step_by_hand() {
    let (b1, b2, eps, eps_root, lr, wd) = (0.9, 0.999, 1e-8, 1e-10, 0.01, 0.1);
    let mut rule = UpdateRule::new(Optimizer::Adam { beta1: b1, beta2: b2, eps, eps_root }, lr);
    rule.weight_decay = wd;
    let model = ModelSpec::Quadratic { curvature: vec![2.0], init: vec![0.25] };
    let plan = TrainPlan::new(model, rule, constant_targets(2, 1.0), PlanConfig::new(1, 1, 0)).unwrap();
    let s1 = step(&plan, &plan.init_state(), &plan.default_z()).unwrap();
    let theta: f64 = 0.25;
    let g = 2.0 * (theta - 1.0);
    let m = (1.0 - b1) * g;
    let v = (1.0 - b2) * g * g;
    let m_hat = m / (1.0 - b1);
    let v_hat = v / (1.0 - b2);
    let expected = theta - lr * (m_hat / ((v_hat + eps_root).sqrt() + eps) + wd * theta);
    assert!((s1.params["theta"].item() - expected).abs() <= 1e-12);
    assert!((s1.aux["adam_m/theta"].item() - m).abs() <= 1e-15);
}

#[test]
fn zero_steps_return_initial_state() {
    let plan = scalar_quadratic_plan(0, MetaSlot::None, UpdateRule::sgd(0.1));
    let s = train(&plan, &plan.default_z()).unwrap();
    assert!(s.bit_eq(&plan.init_state()));
}

#[test]
fn training_is_bit_reproducible_and_resumable() {
    let data = two_gaussians(40, 3, 0.1, 1);
    for (_, rule) in rules() {
        let plan = TrainPlan::new(small_mlp(3), rule, data.clone(), PlanConfig::new(8, 12, 5)).unwrap();
        let z = plan.default_z();
        let a = train(&plan, &z).unwrap();
        let b = train(&plan, &z).unwrap();
        assert!(a.bit_eq(&b));
        let mut s = plan.init_state();
        for _ in 0..5 {
            s = step(&plan, &s, &z).unwrap();
        }
        let restored = OptimizerState::from_bytes(&s.to_bytes()).unwrap();
        assert!(train_from(&plan, restored, &z).unwrap().bit_eq(&a));
    }
}

#[test]
fn zero_data_weights_reproduce_plain_training() {
    let data = two_gaussians(30, 2, 0.2, 2);
    let counts: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let cfg = PlanConfig::new(5, 9, 4).counts(counts);
    let plain = TrainPlan::new(small_mlp(2), UpdateRule::sgd(0.2), data.clone(), cfg.clone()).unwrap();
    let surrogate =
        TrainPlan::new(small_mlp(2), UpdateRule::sgd(0.2), data, cfg.slot(MetaSlot::DataWeights { k: 6, scale: 0.2 }))
            .unwrap();
    let a = train(&plain, &plain.default_z()).unwrap();
    let b = train(&surrogate, &surrogate.default_z()).unwrap();
    assert!(a.bit_eq(&b));
}

#[test]
fn batches_cover_two_epochs() {
    let b = deterministic_batches(11, 10, 3, 2).unwrap();
    assert_eq!(b.len(), 2 * (10 / 3));
    let first: Vec<usize> = b[..3].concat();
    let mut sorted = first.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), first.len());
}

#[test]
fn different_seeds_give_different_orders() {
    let base = deterministic_batches(0, 20, 20, 1).unwrap();
    let same = (1..=100).filter(|&s| deterministic_batches(s, 20, 20, 1).unwrap() == base).count();
    assert!(same <= 1, "{same} of 100 seeds reproduced the seed-0 permutation");
}

#[test]
fn evaluation_examples() {
    let data = two_gaussians(10, 2, 0.1, 3);
    let plan = TrainPlan::new(small_mlp(2), UpdateRule::sgd(0.1), data.clone(), PlanConfig::new(2, 1, 0)).unwrap();
    let mut state = plan.init_state();
    for (name, p) in state.params.iter_mut() {
        if name.starts_with("out.") {
            *p = Tensor::zeros(p.shape());
        }
    }
    let acc = OutputFn::new(OutputKind::Accuracy, data.clone());
    assert_eq!(acc.evaluate(&plan.model, &state, 0).unwrap(), 0.5);

    let single = Arc::new(data.subset(&[3]).unwrap());
    let state = plan.init_state();
    let mean = OutputFn::mean_loss(single.clone()).evaluate(&plan.model, &state, 0).unwrap();
    let sum = OutputFn::new(OutputKind::SumLoss, single).evaluate(&plan.model, &state, 0).unwrap();
    assert_eq!(mean, sum);

    let q = OutputFn::mean_loss(data).with_fraction(0.5, 9);
    assert_eq!(q.evaluate(&plan.model, &state, 4).unwrap(), q.evaluate(&plan.model, &state, 4).unwrap());
    let r0 = q.rows(0).unwrap();
    let r1 = q.rows(1).unwrap();
    assert!(r0.iter().all(|i| !r1.contains(i)), "one pass draws without replacement");
}

#[test]
fn empty_eval_set_is_an_error() {
    let data = two_gaussians(10, 2, 0.1, 3);
    let plan = TrainPlan::new(small_mlp(2), UpdateRule::sgd(0.1), data.clone(), PlanConfig::new(2, 1, 0)).unwrap();
    let empty = Arc::new(data.subset(&[]).unwrap());
    let err = OutputFn::mean_loss(empty).evaluate(&plan.model, &plan.init_state(), 0);
    assert!(matches!(err, Err(metagrad::Error::EmptyEvalSet)));
}

#[test]
fn divergence_reports_the_step() {
    let model = ModelSpec::Quadratic { curvature: vec![1.0], init: vec![0.0] };
    let plan =
        TrainPlan::new(model, UpdateRule::sgd(1e160), constant_targets(2, 1.0), PlanConfig::new(1, 6, 0)).unwrap();
    match train(&plan, &plan.default_z()) {
        Err(metagrad::Error::NonFiniteParam { step }) => assert!(step > 0 && step < 6),
        other => panic!("expected divergence, got {other:?}"),
    }
}

fn random_like(t: &Tensor, rng: &mut impl Rng) -> Tensor {
    let data = (0..t.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn random_cot(s: &OptimizerState, rng: &mut impl Rng) -> StateCotangent {
    let mut c = StateCotangent::zeros_like(s);
    for t in c.params.values_mut().chain(c.aux.values_mut()) {
        *t = random_like(t, rng);
    }
    c
}

fn pairing(a: &StateCotangent, s: &OptimizerState) -> f64 {
    a.params.iter().map(|(k, v)| v.dot(&s.params[k])).sum::<f64>()
        + a.aux.iter().map(|(k, v)| v.dot(&s.aux[k])).sum::<f64>()
}

fn shift(s: &OptimizerState, d: &StateCotangent, h: f64) -> OptimizerState {
    let mut out = s.clone();
    for (k, v) in out.params.iter_mut() {
        *v = v.axpy(h, &d.params[k]).unwrap();
    }
    for (k, v) in out.aux.iter_mut() {
        *v = v.axpy(h, &d.aux[k]).unwrap();
    }
    out
}

// The step's VJP against central differences, in the state and in z, on a
// ten-parameter model.
#[test]
fn step_vjp_matches_finite_differences() {
    let data = two_gaussians(16, 2, 0.15, 7);
    let slots = [
        MetaSlot::DataWeights { k: 0, scale: 0.25 },
        MetaSlot::SamplePerturbation { n_p: 3 },
        MetaSlot::LearningRate(LrParam::Keypoints(3)),
    ];
    let mut rng = stream(3, "vjp-test");
    for (name, rule) in rules() {
        for slot in slots {
            let model = ModelSpec::Mlp(metagrad::training::MlpSpec {
                pooling: metagrad::training::Pooling::None,
                ..metagrad::training::MlpSpec::smooth(2, vec![2], 2)
            });
            let plan = TrainPlan::new(model, rule, data.clone(), PlanConfig::new(4, 2, 1).slot(slot)).unwrap();
            assert_eq!(plan.init_state().params.values().map(Tensor::len).sum::<usize>(), 16);
            let z = plan.default_z();
            let z = match slot {
                MetaSlot::DataWeights { .. } => random_like(&z, &mut rng),
                _ => z,
            };
            let s0 = plan.init_state();
            let s = step(&plan, &s0, &z).unwrap();
            let s = OptimizerState { params: s.params, aux: s.aux, t: 0 };
            let cot = random_cot(&s, &mut rng);
            let (sbar, zbar) = step_vjp(&plan, &s, &z, &cot).unwrap();
            let h = 1e-6;
            let mut dir = random_cot(&s, &mut rng);
            // Keep second moments positive under the perturbation.
            for (k, d) in dir.aux.iter_mut() {
                if k.starts_with("adam_v/") {
                    *d = d.zip_map(&s.aux[k], |u, v| u * v).unwrap();
                }
            }
            let f = |st: &OptimizerState, zz: &Tensor| {
                let n = step(&plan, st, zz).unwrap();
                pairing(&cot, &n)
            };
            let fd = (f(&shift(&s, &dir, h), &z) - f(&shift(&s, &dir, -h), &z)) / (2.0 * h);
            let an = pairing(&sbar, &as_state(&dir, &s));
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-8);
            assert!(rel < 1e-5, "{name} {slot:?} state: fd {fd} vs {an}");
            let dz = random_like(&z, &mut rng);
            let fdz = (f(&s, &z.axpy(h, &dz).unwrap()) - f(&s, &z.axpy(-h, &dz).unwrap())) / (2.0 * h);
            let anz = zbar.dot(&dz);
            let rel = (fdz - anz).abs() / fdz.abs().max(anz.abs()).max(1e-8);
            assert!(rel < 1e-5, "{name} {slot:?} z: fd {fdz} vs {anz}");
        }
    }
}

fn as_state(d: &StateCotangent, like: &OptimizerState) -> OptimizerState {
    OptimizerState { t: like.t, params: d.params.clone(), aux: d.aux.clone() }
}
