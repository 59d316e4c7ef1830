//! Output functions `phi` of a trained state.

use std::sync::Arc;

use rand::seq::SliceRandom;

use super::model::{params_to_tape, ModelSpec, Params};
use super::state::OptimizerState;
use crate::autodiff::{Tape, Var};
use crate::data::rng::indexed_stream;
use crate::data::{Dataset, Task};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum OutputKind {
    MeanLoss,
    SumLoss,
    /// Fraction of argmax predictions matching the label argmax; not
    /// differentiable.
    Accuracy,
    /// One parameter coordinate.
    Param {
        name: String,
        index: usize,
    },
}

#[derive(Debug, Clone)]
pub struct OutputFn {
    pub kind: OutputKind,
    pub data: Arc<Dataset>,
    /// Minibatch fraction and its seed. Round `r` scores a minibatch drawn
    /// without replacement within each pass over the set.
    pub subsample: Option<(f64, u64)>,
}

impl OutputFn {
    pub fn new(kind: OutputKind, data: Arc<Dataset>) -> Self {
        OutputFn { kind, data, subsample: None }
    }

    pub fn mean_loss(data: Arc<Dataset>) -> Self {
        Self::new(OutputKind::MeanLoss, data)
    }

    pub fn with_fraction(mut self, q: f64, seed: u64) -> Self {
        self.subsample = Some((q, seed));
        self
    }

    /// Rows scored at outer round `round`.
    pub fn rows(&self, round: u64) -> Result<Vec<usize>> {
        let n = self.data.len();
        if n == 0 {
            return Err(Error::EmptyEvalSet);
        }
        match self.subsample {
            None => Ok((0..n).collect()),
            Some((q, seed)) => {
                if !(q > 0.0 && q <= 1.0) {
                    return Err(Error::config(format!("minibatch fraction {q} outside (0, 1]")));
                }
                let m = ((q * n as f64).round() as usize).clamp(1, n);
                let per_pass = (n / m) as u64;
                let (pass, chunk) = (round / per_pass, (round % per_pass) as usize);
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut indexed_stream(seed, "eval-minibatch", pass));
                Ok(perm[chunk * m..(chunk + 1) * m].to_vec())
            }
        }
    }

    fn record(
        &self,
        tape: &mut Tape,
        model: &ModelSpec,
        params: &super::model::ParamVars,
        rows: &[usize],
    ) -> Result<Var> {
        if let OutputKind::Param { name, index } = &self.kind {
            let p = *params.get(name).ok_or_else(|| Error::config(format!("no parameter {name}")))?;
            let n = tape.value(p).len();
            if *index >= n {
                return Err(Error::config(format!("index {index} out of {n} in {name}")));
            }
            let mut e = Tensor::zeros(tape.shape(p));
            e.data_mut()[*index] = 1.0;
            let e = tape.constant(e);
            return tape.dot(e, p);
        }
        let sub = self.data.subset(rows)?;
        let x = tape.constant(sub.features().clone());
        let y = tape.constant(sub.labels().clone());
        let per_sample = model.per_sample_loss(tape, params, x, y)?;
        match self.kind {
            OutputKind::MeanLoss => tape.mean(per_sample),
            OutputKind::SumLoss => tape.sum(per_sample),
            _ => unreachable!("handled above"),
        }
    }

    /// `phi(state)` at outer round `round`.
    pub fn evaluate(&self, model: &ModelSpec, state: &OptimizerState, round: u64) -> Result<f64> {
        let rows = self.rows(round)?;
        if self.kind == OutputKind::Accuracy {
            return accuracy(model, &state.params, &self.data.subset(&rows)?);
        }
        let mut tape = Tape::new();
        let pv = params_to_tape(&mut tape, &state.params);
        let out = self.record(&mut tape, model, &pv, &rows)?;
        Ok(tape.value(out).item())
    }

    /// `phi(state)` and its gradient with respect to the parameters.
    pub fn value_and_grad(&self, model: &ModelSpec, state: &OptimizerState, round: u64) -> Result<(f64, Params)> {
        if self.kind == OutputKind::Accuracy {
            return Err(Error::config("accuracy is not differentiable"));
        }
        let rows = self.rows(round)?;
        let mut tape = Tape::new();
        let pv = params_to_tape(&mut tape, &state.params);
        let out = self.record(&mut tape, model, &pv, &rows)?;
        let names: Vec<String> = pv.keys().cloned().collect();
        let vars: Vec<Var> = names.iter().map(|n| pv[n]).collect();
        let one = tape.scalar(1.0);
        let grads = tape.vjp(&[out], &[one], &vars)?;
        let value = tape.value(out).item();
        Ok((value, names.into_iter().zip(grads).map(|(n, g)| (n, tape.value(g).clone())).collect()))
    }
}

/// Classification accuracy of `params` on `data`.
pub fn accuracy(model: &ModelSpec, params: &Params, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    if data.task() != Task::Classification {
        return Err(Error::config("accuracy needs a classification set"));
    }
    let mut tape = Tape::new();
    let pv = params_to_tape(&mut tape, params);
    let x = tape.constant(data.features().clone());
    let out = model.forward(&mut tape, &pv, x)?;
    let logits = tape.value(out);
    let correct = (0..data.len()).filter(|&i| crate::data::argmax_row(logits.row(i)) == data.class_of(i)).count();
    Ok(correct as f64 / data.len() as f64)
}
