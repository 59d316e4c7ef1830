use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("non-finite parameter produced at optimizer step {step}")]
    NonFiniteParam { step: usize },

    #[error("non-finite cotangent at step {step}")]
    NonFiniteCotangent { step: usize },

    #[error("replay nondeterminism: state {index} changed on re-execution")]
    Determinism { index: usize },

    #[error("checksum mismatch reading spilled state {index}")]
    Corrupt { index: usize },

    #[error("live-state bound exceeded: {live} stored, bound {bound}")]
    StorageBound { live: usize, bound: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("evaluation set is empty")]
    EmptyEvalSet,

    #[error("all data counts are zero; nothing to train on")]
    EmptyTrainingSet,

    #[error("non-finite training function value")]
    NonFiniteObjective,

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape { op, detail: detail.into() }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for failures caused by numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::NonFiniteParam { .. }
                | Error::NonFiniteCotangent { .. }
                | Error::NonFiniteObjective
                | Error::Determinism { .. }
                | Error::Corrupt { .. }
                | Error::StorageBound { .. }
        )
    }
}
