//! Exact metagradients of training runs.
//!
//! Training is written as `s_{t+1} = h_t(s_t, z)` over a differentiable
//! tape. Gradients of a post-training output with respect to the
//! metaparameter `z` are computed step by step, either from all stored
//! states or by replaying segments of training from a lazy k-ary
//! checkpoint tree.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod apps;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod metasmooth;
pub mod replay;
pub mod snapshot;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Tensor;
