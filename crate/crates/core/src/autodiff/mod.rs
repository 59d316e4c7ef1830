//! Reverse-mode differentiation closed under itself.

mod gelu;
pub mod gradcheck;
mod tape;

pub use gelu::gelu_derivative;
pub use gradcheck::{check_gradient, check_second_order, GradCheckReport};
pub use tape::{PoolMode, Precision, Tape, Var};
