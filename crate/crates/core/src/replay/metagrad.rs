//! Step-wise reverse accumulation of `d phi(s_T) / dz`.

use super::store::SpillConfig;
use super::tree::CheckpointTree;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::training::{step, step_vjp, OptimizerState, OutputFn, StateCotangent, TrainPlan};

/// What to do when a cotangent stops being finite.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum OverflowPolicy {
    #[default]
    Abort,
    /// Clamp cotangents into `[-bound, bound]` after every step and count
    /// the steps where that changed something.
    Clip { bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetagradOptions {
    /// Outer round, forwarded to the output function's minibatch choice.
    pub round: u64,
    pub overflow: OverflowPolicy,
    /// Keep each step's contribution to the metagradient.
    pub keep_per_step: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeOptions {
    pub k: usize,
    /// Compare digests of replayed states against their first computation.
    pub verify: bool,
    pub spill: Option<SpillConfig>,
}

impl TreeOptions {
    pub fn new(k: usize) -> Self {
        TreeOptions { k, verify: true, spill: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetagradReport {
    pub metagrad: Tensor,
    /// `phi(s_T)`.
    pub value: f64,
    /// `s_T`.
    pub final_state: OptimizerState,
    /// Contribution of step `t` at position `t`, when requested.
    pub per_step: Option<Vec<Tensor>>,
    pub peak_live_states: usize,
    pub forward_steps: usize,
    pub replayed_steps: usize,
    pub backward_steps: usize,
    /// `(forward_steps + replayed_steps) / T`.
    pub equivalent_trainings: f64,
    /// Steps whose cotangent was clipped.
    pub clipped_steps: usize,
}

struct Accumulator<'a> {
    plan: &'a TrainPlan,
    z: &'a Tensor,
    opts: &'a MetagradOptions,
    cot: Option<StateCotangent>,
    zbar: Tensor,
    value: f64,
    last: Option<OptimizerState>,
    per_step: Vec<Option<Tensor>>,
    clipped: usize,
    backward: usize,
}

impl<'a> Accumulator<'a> {
    fn new(plan: &'a TrainPlan, z: &'a Tensor, opts: &'a MetagradOptions) -> Self {
        Accumulator {
            plan,
            z,
            opts,
            cot: None,
            zbar: Tensor::zeros(z.shape()),
            value: f64::NAN,
            last: None,
            per_step: vec![None; plan.steps()],
            clipped: 0,
            backward: 0,
        }
    }

    fn clip(&mut self, cot: &mut StateCotangent) {
        if let OverflowPolicy::Clip { bound } = self.opts.overflow {
            if cot.clip(bound) {
                self.clipped += 1;
            }
        }
    }

    fn visit(&mut self, output: &OutputFn, index: usize, state: &OptimizerState) -> Result<()> {
        match self.cot.take() {
            None => {
                debug_assert_eq!(index, self.plan.steps());
                let (value, grads) = output.value_and_grad(&self.plan.model, state, self.opts.round)?;
                if !value.is_finite() {
                    return Err(Error::NonFiniteObjective);
                }
                let mut cot = StateCotangent::zeros_like(state);
                cot.params = grads;
                if !cot.is_finite() {
                    return Err(Error::NonFiniteCotangent { step: index });
                }
                self.clip(&mut cot);
                self.value = value;
                self.last = Some(state.clone());
                self.cot = Some(cot);
            }
            Some(cot) => {
                let (mut prev, contrib) = step_vjp(self.plan, state, self.z, &cot)?;
                self.clip(&mut prev);
                self.zbar = self.zbar.zip_map(&contrib, |a, b| a + b)?;
                if self.opts.keep_per_step {
                    self.per_step[index] = Some(contrib);
                }
                self.backward += 1;
                self.cot = Some(prev);
            }
        }
        Ok(())
    }

    fn report(self, peak: usize, forward: usize, replayed: usize) -> MetagradReport {
        let steps = self.plan.steps();
        MetagradReport {
            metagrad: self.zbar,
            value: self.value,
            final_state: self.last.expect("final state visited"),
            per_step: self
                .opts
                .keep_per_step
                .then(|| self.per_step.into_iter().map(|t| t.expect("every step visited")).collect()),
            peak_live_states: peak,
            forward_steps: forward,
            replayed_steps: replayed,
            backward_steps: self.backward,
            equivalent_trainings: if steps == 0 { 0.0 } else { (forward + replayed) as f64 / steps as f64 },
            clipped_steps: self.clipped,
        }
    }
}

/// Metagradient from all `T + 1` stored states.
pub fn metagrad_stepwise(
    plan: &TrainPlan,
    z: &Tensor,
    output: &OutputFn,
    opts: &MetagradOptions,
) -> Result<MetagradReport> {
    plan.check_z(z)?;
    let mut states = Vec::with_capacity(plan.steps() + 1);
    states.push(plan.init_state());
    for _ in 0..plan.steps() {
        let next = step(plan, states.last().expect("non-empty"), z)?;
        states.push(next);
    }
    let mut acc = Accumulator::new(plan, z, opts);
    for (i, s) in states.iter().enumerate().rev() {
        acc.visit(output, i, s)?;
    }
    Ok(acc.report(states.len(), plan.steps(), 0))
}

/// Metagradient with states re-instantiated from a lazy k-ary tree.
pub fn metagrad_replay(
    plan: &TrainPlan,
    z: &Tensor,
    output: &OutputFn,
    opts: &MetagradOptions,
    tree: &TreeOptions,
) -> Result<MetagradReport> {
    metagrad_replay_with(plan, z, output, opts, tree, |s| step(plan, s, z))
}

/// [`metagrad_replay`] with a caller-supplied forward step, e.g. to inject
/// faults.
pub fn metagrad_replay_with<F>(
    plan: &TrainPlan,
    z: &Tensor,
    output: &OutputFn,
    opts: &MetagradOptions,
    tree: &TreeOptions,
    mut forward: F,
) -> Result<MetagradReport>
where
    F: FnMut(&OptimizerState) -> Result<OptimizerState>,
{
    plan.check_z(z)?;
    let mut traversal = CheckpointTree::new(
        plan.steps() + 1,
        tree.k,
        plan.init_state(),
        |s: &OptimizerState, _| forward(s),
        tree.verify,
        tree.spill.clone(),
    )?;
    let mut acc = Accumulator::new(plan, z, opts);
    for item in traversal.by_ref() {
        let (i, s) = item?;
        acc.visit(output, i, &s)?;
    }
    let stats = traversal.stats();
    Ok(acc.report(stats.peak_live, stats.forward_steps, stats.replayed_steps))
}
