//! Deterministic training loops `s_{t+1} = h_t(s_t, z)` and output
//! functions.

pub mod model;
mod optimizer;
mod output;
mod plan;
mod state;
mod step;

pub use model::{Activation, LossKind, MlpSpec, ModelSpec, NormPlacement, Params, Pooling};
pub use optimizer::{Optimizer, UpdateRule};
pub use output::{accuracy, OutputFn, OutputKind};
pub use plan::{deterministic_batches, keypoint_weights, lr_schedule_value, LrParam, MetaSlot, PlanConfig, TrainPlan};
pub use state::{OptimizerState, StateCotangent};
pub use step::{record_step, step, step_vjp, train, train_from, StateVars};
