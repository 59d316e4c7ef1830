//! Model families and their per-sample losses, recorded on a tape.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{PoolMode, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub type Params = BTreeMap<String, Tensor>;
pub type ParamVars = BTreeMap<String, Var>;

const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Relu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormPlacement {
    None,
    BeforeActivation,
    AfterActivation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pooling {
    None,
    Average,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Softmax cross-entropy against label distributions.
    CrossEntropy,
    /// Half squared error against real targets.
    SquaredError,
}

/// Fully connected network. Each hidden layer is
/// `linear -> [norm] -> activation -> [norm] -> [pool]`, with the norm on
/// the side chosen by `norm`; the output layer's logits are multiplied by
/// `final_scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub norm: NormPlacement,
    /// Window-2 pooling across hidden units.
    pub pooling: Pooling,
    pub final_scale: f64,
    pub loss: LossKind,
}

impl MlpSpec {
    /// The smooth defaults: norm before activation, GELU, average pooling,
    /// output scale 0.125.
    pub fn smooth(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            input_dim,
            hidden,
            output_dim,
            activation: Activation::Gelu,
            norm: NormPlacement::BeforeActivation,
            pooling: Pooling::Average,
            final_scale: 0.125,
            loss: LossKind::CrossEntropy,
        }
    }

    /// The standard counterpart: norm after a ReLU, max pooling, unit scale.
    pub fn standard(input_dim: usize, hidden: Vec<usize>, output_dim: usize) -> Self {
        MlpSpec {
            activation: Activation::Relu,
            norm: NormPlacement::AfterActivation,
            pooling: Pooling::Max,
            final_scale: 1.0,
            ..Self::smooth(input_dim, hidden, output_dim)
        }
    }

    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::new();
        let mut fan_in = self.input_dim;
        for &w in &self.hidden {
            dims.push((fan_in, w));
            fan_in = if self.pooling == Pooling::None { w } else { w / 2 };
        }
        dims.push((fan_in, self.output_dim));
        dims
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelSpec {
    /// One parameter vector `theta` with per-sample loss
    /// `0.5 * sum_j a_j (theta_j - x_j)^2`.
    Quadratic {
        curvature: Vec<f64>,
        init: Vec<f64>,
    },
    Mlp(MlpSpec),
}

impl ModelSpec {
    pub fn validate(&self, feature_dim: usize, label_dim: usize) -> Result<()> {
        match self {
            ModelSpec::Quadratic { curvature, init } => {
                if curvature.len() != feature_dim || init.len() != feature_dim {
                    return Err(Error::config(format!(
                        "quadratic model of dim {} on {feature_dim}-dim data",
                        curvature.len()
                    )));
                }
            }
            ModelSpec::Mlp(m) => {
                if m.input_dim != feature_dim {
                    return Err(Error::config(format!(
                        "model input {} but data has {feature_dim} features",
                        m.input_dim
                    )));
                }
                if m.output_dim != label_dim {
                    return Err(Error::config(format!(
                        "model output {} but labels have {label_dim} columns",
                        m.output_dim
                    )));
                }
                if m.pooling != Pooling::None && m.hidden.iter().any(|w| w % 2 != 0) {
                    return Err(Error::config("pooling needs even hidden widths"));
                }
                if m.hidden.contains(&0) || !m.final_scale.is_finite() {
                    return Err(Error::config("hidden widths must be positive and the output scale finite"));
                }
            }
        }
        Ok(())
    }

    pub fn is_norm_param(name: &str) -> bool {
        name.contains(".norm_")
    }

    /// Initial parameters, drawn from `rng`.
    pub fn init_params(&self, rng: &mut ChaCha8Rng) -> Params {
        let mut p = Params::new();
        match self {
            ModelSpec::Quadratic { init, .. } => {
                p.insert("theta".into(), Tensor::vector(init.clone()));
            }
            ModelSpec::Mlp(m) => {
                let dims = m.layer_dims();
                let last = dims.len() - 1;
                for (i, &(fan_in, fan_out)) in dims.iter().enumerate() {
                    let prefix = if i == last { "out".to_string() } else { format!("l{i}") };
                    let std = (1.0 / fan_in as f64).sqrt();
                    let normal = Normal::new(0.0, std).expect("positive std");
                    let w: Vec<f64> = (0..fan_in * fan_out).map(|_| normal.sample(rng)).collect();
                    p.insert(format!("{prefix}.weight"), Tensor::new(vec![fan_in, fan_out], w).expect("shape"));
                    p.insert(format!("{prefix}.bias"), Tensor::zeros(&[fan_out]));
                    if i != last && m.norm != NormPlacement::None {
                        p.insert(format!("{prefix}.norm_gamma"), Tensor::full(&[fan_out], 1.0));
                        p.insert(format!("{prefix}.norm_beta"), Tensor::zeros(&[fan_out]));
                    }
                }
            }
        }
        p
    }

    pub fn init_from_seed(&self, seed: u64) -> Params {
        self.init_params(&mut crate::data::rng::stream(seed, "init"))
    }

    /// Network outputs for a `[b, d]` input; the quadratic model has none.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVars, x: Var) -> Result<Var> {
        let ModelSpec::Mlp(m) = self else {
            return Err(Error::config("the quadratic model has no predictions"));
        };
        let b = tape.shape(x)[0];
        let p =
            |name: String| params.get(&name).copied().ok_or_else(|| Error::config(format!("missing parameter {name}")));
        let mut h = x;
        for i in 0..m.hidden.len() {
            let w = p(format!("l{i}.weight"))?;
            let bias = p(format!("l{i}.bias"))?;
            h = linear(tape, h, w, bias, b)?;
            if m.norm == NormPlacement::BeforeActivation {
                h = tape.batch_norm(h, p(format!("l{i}.norm_gamma"))?, p(format!("l{i}.norm_beta"))?, BN_EPS)?;
            }
            h = match m.activation {
                Activation::Relu => tape.relu(h)?,
                Activation::Gelu => tape.gelu(h)?,
            };
            if m.norm == NormPlacement::AfterActivation {
                h = tape.batch_norm(h, p(format!("l{i}.norm_gamma"))?, p(format!("l{i}.norm_beta"))?, BN_EPS)?;
            }
            h = match m.pooling {
                Pooling::None => h,
                Pooling::Average => tape.pool(h, 2, PoolMode::Average)?,
                Pooling::Max => tape.pool(h, 2, PoolMode::Max)?,
            };
        }
        let out = linear(tape, h, p("out.weight".into())?, p("out.bias".into())?, b)?;
        tape.scale(out, m.final_scale)
    }

    /// Loss of every row of `x` against the matching row of `y`, as a `[b]`
    /// vector.
    pub fn per_sample_loss(&self, tape: &mut Tape, params: &ParamVars, x: Var, y: Var) -> Result<Var> {
        match self {
            ModelSpec::Quadratic { curvature, .. } => {
                let b = tape.shape(x)[0];
                let theta = *params.get("theta").ok_or_else(|| Error::config("missing parameter theta"))?;
                let tb = tape.broadcast_axis(theta, 0, b)?;
                let diff = tape.sub(tb, x)?;
                let sq = tape.square(diff)?;
                let a = tape.constant(Tensor::vector(curvature.clone()));
                let ab = tape.broadcast_axis(a, 0, b)?;
                let weighted = tape.mul(sq, ab)?;
                let s = tape.sum_axis(weighted, 1)?;
                tape.scale(s, 0.5)
            }
            ModelSpec::Mlp(m) => {
                let out = self.forward(tape, params, x)?;
                match m.loss {
                    LossKind::CrossEntropy => tape.softmax_cross_entropy(out, y),
                    LossKind::SquaredError => {
                        let diff = tape.sub(out, y)?;
                        let sq = tape.square(diff)?;
                        let s = tape.sum_axis(sq, 1)?;
                        tape.scale(s, 0.5)
                    }
                }
            }
        }
    }
}

fn linear(tape: &mut Tape, x: Var, w: Var, bias: Var, b: usize) -> Result<Var> {
    let xw = tape.matmul(x, w)?;
    let bb = tape.broadcast_axis(bias, 0, b)?;
    tape.add(xw, bb)
}

/// Places a parameter map on the tape as inputs.
pub fn params_to_tape(tape: &mut Tape, params: &Params) -> ParamVars {
    params.iter().map(|(k, v)| (k.clone(), tape.input(v.clone()))).collect()
}

/// Total number of scalar parameters.
pub fn param_count(params: &Params) -> usize {
    params.values().map(Tensor::len).sum()
}

/// All parameters flattened in name order.
pub fn flatten(params: &Params) -> Vec<f64> {
    params.values().flat_map(|t| t.data().iter().copied()).collect()
}
