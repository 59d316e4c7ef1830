use serde::{Deserialize, Serialize};

use super::model::{ModelSpec, ParamVars, Params};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    Momentum {
        beta: f64,
        #[serde(default)]
        nesterov: bool,
    },
    /// Bias-corrected Adam; `eps_root` sits inside the square root and must
    /// be positive when metagradients are taken.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        eps_root: f64,
    },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8, eps_root: 1e-12 }
    }

    pub fn momentum(beta: f64) -> Self {
        Optimizer::Momentum { beta, nesterov: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateRule {
    pub optimizer: Optimizer,
    /// Learning rate, unless the plan's metaparameter supplies one.
    pub lr: f64,
    /// Decoupled weight decay, applied as `lr * weight_decay * theta`.
    pub weight_decay: f64,
    /// Skip weight decay on normalization parameters.
    pub exclude_norm_from_decay: bool,
}

impl UpdateRule {
    pub fn new(optimizer: Optimizer, lr: f64) -> Self {
        UpdateRule { optimizer, lr, weight_decay: 0.0, exclude_norm_from_decay: true }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::new(Optimizer::Sgd, lr)
    }

    pub fn validate(&self, differentiable: bool) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        match self.optimizer {
            Optimizer::Sgd => {}
            Optimizer::Momentum { beta, .. } => {
                if !unit(beta) {
                    return Err(Error::config(format!("momentum {beta} outside [0, 1)")));
                }
            }
            Optimizer::Adam { beta1, beta2, eps, eps_root } => {
                if !unit(beta1) || !unit(beta2) {
                    return Err(Error::config("Adam betas must lie in [0, 1)"));
                }
                if eps < 0.0 || eps_root < 0.0 {
                    return Err(Error::config("Adam eps and eps_root must be >= 0"));
                }
                if differentiable && eps_root <= 0.0 {
                    return Err(Error::config("Adam needs eps_root > 0 to be differentiated"));
                }
            }
        }
        if !(self.lr.is_finite()) || self.weight_decay < 0.0 {
            return Err(Error::config("learning rate must be finite and weight decay >= 0"));
        }
        Ok(())
    }

    /// Names of the auxiliary tensors kept per parameter.
    pub fn aux_prefixes(&self) -> &'static [&'static str] {
        match self.optimizer {
            Optimizer::Sgd => &[],
            Optimizer::Momentum { .. } => &["momentum"],
            Optimizer::Adam { .. } => &["adam_m", "adam_v"],
        }
    }

    pub fn init_aux(&self, params: &Params) -> Params {
        let mut aux = Params::new();
        for prefix in self.aux_prefixes() {
            for (name, p) in params {
                aux.insert(format!("{prefix}/{name}"), Tensor::zeros(p.shape()));
            }
        }
        aux
    }

    /// Records one update of every parameter given its gradient. `t` is the
    /// zero-based step index and `lr` a scalar variable.
    pub fn record(
        &self,
        tape: &mut Tape,
        t: usize,
        lr: Var,
        params: &ParamVars,
        aux: &ParamVars,
        grads: &ParamVars,
    ) -> Result<(ParamVars, ParamVars)> {
        let mut new_params = ParamVars::new();
        let mut new_aux = ParamVars::new();
        let aux_of = |prefix: &str, name: &str| {
            aux.get(&format!("{prefix}/{name}"))
                .copied()
                .ok_or_else(|| Error::config(format!("missing optimizer state {prefix}/{name}")))
        };
        for (name, &theta) in params {
            let g = grads[name];
            let shape = tape.shape(theta).to_vec();
            let direction = match self.optimizer {
                Optimizer::Sgd => g,
                Optimizer::Momentum { beta, nesterov } => {
                    let buf = aux_of("momentum", name)?;
                    let decayed = tape.scale(buf, beta)?;
                    let buf_new = tape.add(decayed, g)?;
                    new_aux.insert(format!("momentum/{name}"), buf_new);
                    if nesterov {
                        let look = tape.scale(buf_new, beta)?;
                        tape.add(g, look)?
                    } else {
                        buf_new
                    }
                }
                Optimizer::Adam { beta1, beta2, eps, eps_root } => {
                    let m = aux_of("adam_m", name)?;
                    let v = aux_of("adam_v", name)?;
                    let m_keep = tape.scale(m, beta1)?;
                    let g1 = tape.scale(g, 1.0 - beta1)?;
                    let m_new = tape.add(m_keep, g1)?;
                    let v_keep = tape.scale(v, beta2)?;
                    let g_sq = tape.square(g)?;
                    let g2 = tape.scale(g_sq, 1.0 - beta2)?;
                    let v_new = tape.add(v_keep, g2)?;
                    new_aux.insert(format!("adam_m/{name}"), m_new);
                    new_aux.insert(format!("adam_v/{name}"), v_new);
                    let step = (t + 1) as i32;
                    let m_hat = tape.scale(m_new, 1.0 / (1.0 - beta1.powi(step)))?;
                    let v_hat = tape.scale(v_new, 1.0 / (1.0 - beta2.powi(step)))?;
                    let v_root = tape.add_scalar(v_hat, eps_root)?;
                    let denom = tape.sqrt(v_root)?;
                    let denom = tape.add_scalar(denom, eps)?;
                    tape.div(m_hat, denom)?
                }
            };
            let decays = self.weight_decay != 0.0 && !(self.exclude_norm_from_decay && ModelSpec::is_norm_param(name));
            let direction = if decays {
                let wd = tape.scale(theta, self.weight_decay)?;
                tape.add(direction, wd)?
            } else {
                direction
            };
            let lr_b = tape.broadcast_scalar(lr, &shape)?;
            let delta = tape.mul(lr_b, direction)?;
            new_params.insert(name.clone(), tape.sub(theta, delta)?);
        }
        Ok((new_params, new_aux))
    }
}
