//! One optimizer step as a differentiable map `(s_t, z) -> s_{t+1}`.

use std::sync::Arc;

use super::model::{params_to_tape, ParamVars};
use super::plan::{MetaSlot, TrainPlan};
use super::state::{OptimizerState, StateCotangent};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tape handles of a state placed on a tape.
#[derive(Debug, Clone)]
pub struct StateVars {
    pub params: ParamVars,
    pub aux: ParamVars,
}

impl StateVars {
    pub fn input(tape: &mut Tape, state: &OptimizerState) -> Self {
        StateVars { params: params_to_tape(tape, &state.params), aux: params_to_tape(tape, &state.aux) }
    }

    fn values(&self, tape: &Tape, t: usize) -> OptimizerState {
        let read = |m: &ParamVars| m.iter().map(|(k, &v)| (k.clone(), tape.value(v).clone())).collect();
        OptimizerState { t, params: read(&self.params), aux: read(&self.aux) }
    }

    fn all(&self) -> Vec<Var> {
        self.params.values().chain(self.aux.values()).copied().collect()
    }
}

fn rows_of(t: &Tensor, rows: &[usize]) -> Tensor {
    let (_, c) = t.dims2().expect("matrix");
    let mut out = Vec::with_capacity(rows.len() * c);
    for &i in rows {
        out.extend_from_slice(t.row(i));
    }
    Tensor::new(vec![rows.len(), c], out).expect("shape")
}

// Batch features and labels for step `t`.
fn record_batch(tape: &mut Tape, plan: &TrainPlan, t: usize, z: Var) -> Result<(Var, Var)> {
    let rows = &plan.batches[t];
    let data = &plan.data;
    match plan.slot {
        MetaSlot::SamplePerturbation { n_p } => {
            let d = data.feature_dim();
            let width = d + data.label_dim();
            let joined = data.joined();
            let mut clean = rows_of(&joined, rows);
            let mut from_z: Vec<Option<usize>> = Vec::with_capacity(rows.len());
            for (p, &i) in rows.iter().enumerate() {
                if i < n_p {
                    clean.data_mut()[p * width..(p + 1) * width].fill(0.0);
                    from_z.push(Some(i));
                } else {
                    from_z.push(None);
                }
            }
            let clean = tape.constant(clean);
            let poisoned = tape.gather_rows(z, Arc::from(from_z))?;
            let all = tape.add(clean, poisoned)?;
            let x = tape.slice_cols(all, 0, d)?;
            let y = tape.slice_cols(all, d, width)?;
            Ok((x, y))
        }
        _ => {
            let x = tape.constant(rows_of(data.features(), rows));
            let y = tape.constant(rows_of(data.labels(), rows));
            Ok((x, y))
        }
    }
}

/// Records `h_t(state, z)` and returns the new state's handles.
pub fn record_step(tape: &mut Tape, plan: &TrainPlan, t: usize, state: &StateVars, z: Var) -> Result<StateVars> {
    let (x, y) = record_batch(tape, plan, t, z)?;
    let per_sample = plan.model.per_sample_loss(tape, &state.params, x, y)?;
    let mut loss = tape.mean(per_sample)?;
    if let MetaSlot::DataWeights { k, scale } = plan.slot {
        if t == k {
            let px = tape.constant(plan.data.features().clone());
            let py = tape.constant(plan.data.labels().clone());
            let pool = plan.model.per_sample_loss(tape, &state.params, px, py)?;
            let weighted = tape.dot(z, pool)?;
            let weighted = tape.scale(weighted, scale)?;
            loss = tape.add(loss, weighted)?;
        }
    }
    let names: Vec<String> = state.params.keys().cloned().collect();
    let param_vars: Vec<Var> = names.iter().map(|n| state.params[n]).collect();
    let one = tape.scalar(1.0);
    let grads = tape.vjp(&[loss], &[one], &param_vars)?;
    let grads: ParamVars = names.into_iter().zip(grads).collect();
    let lr = match plan.lr_weights(t) {
        Some(w) => {
            let w = tape.constant(Tensor::vector(w));
            tape.dot(w, z)?
        }
        None => tape.scalar(plan.rule.lr),
    };
    let (params, aux) = plan.rule.record(tape, t, lr, &state.params, &state.aux, &grads)?;
    Ok(StateVars { params, aux })
}

fn as_param_error(e: Error, step: usize) -> Error {
    match e {
        Error::NonFinite { .. } => Error::NonFiniteParam { step },
        other => other,
    }
}

/// `s_{t+1} = h_t(s_t, z)`.
pub fn step(plan: &TrainPlan, state: &OptimizerState, z: &Tensor) -> Result<OptimizerState> {
    let t = state.t;
    if t >= plan.steps() {
        return Err(Error::config(format!("step {t} beyond T = {}", plan.steps())));
    }
    plan.check_z(z)?;
    let mut tape = Tape::with_precision(plan.precision);
    let sv = StateVars::input(&mut tape, state);
    let zv = tape.input(z.clone());
    let next = record_step(&mut tape, plan, t, &sv, zv).map_err(|e| as_param_error(e, t))?;
    let out = next.values(&tape, t + 1);
    if !out.is_finite() {
        return Err(Error::NonFiniteParam { step: t });
    }
    Ok(out)
}

/// `s_T`, starting from the plan's initial state.
pub fn train(plan: &TrainPlan, z: &Tensor) -> Result<OptimizerState> {
    train_from(plan, plan.init_state(), z)
}

/// Runs the remaining steps from `state`.
pub fn train_from(plan: &TrainPlan, mut state: OptimizerState, z: &Tensor) -> Result<OptimizerState> {
    while state.t < plan.steps() {
        state = step(plan, &state, z)?;
    }
    Ok(state)
}

/// Backpropagates `cot = ds̄_{t+1}` through step `state.t`. Returns
/// `s̄_t` and this step's contribution to `z̄`.
pub fn step_vjp(
    plan: &TrainPlan,
    state: &OptimizerState,
    z: &Tensor,
    cot: &StateCotangent,
) -> Result<(StateCotangent, Tensor)> {
    let t = state.t;
    plan.check_z(z)?;
    let fail = |e: Error| match e {
        Error::NonFinite { .. } => Error::NonFiniteCotangent { step: t },
        other => other,
    };
    let mut tape = Tape::with_precision(plan.precision);
    let sv = StateVars::input(&mut tape, state);
    let zv = tape.input(z.clone());
    let next = record_step(&mut tape, plan, t, &sv, zv).map_err(|e| as_param_error(e, t))?;
    let mut outs = Vec::new();
    let mut cots = Vec::new();
    for (name, &v) in &next.params {
        outs.push(v);
        cots.push(tape.constant(cot.params[name].clone()));
    }
    for (name, &v) in &next.aux {
        outs.push(v);
        cots.push(tape.constant(cot.aux[name].clone()));
    }
    let mut wrt = sv.all();
    wrt.push(zv);
    let grads = tape.vjp(&outs, &cots, &wrt).map_err(fail)?;
    let mut it = grads.into_iter();
    let mut take = |m: &ParamVars| -> crate::training::model::Params {
        m.keys().map(|k| (k.clone(), tape.value(it.next().expect("one grad per input")).clone())).collect()
    };
    let params = take(&sv.params);
    let aux = take(&sv.aux);
    let zbar = tape.value(it.next().expect("z grad")).clone();
    let out = StateCotangent { params, aux };
    if !out.is_finite() || !zbar.all_finite() {
        return Err(Error::NonFiniteCotangent { step: t });
    }
    Ok((out, zbar))
}
