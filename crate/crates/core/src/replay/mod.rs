//! Exact metagradients: step-wise reverse accumulation over stored or
//! replayed training states.

pub mod check;
mod metagrad;
mod store;
mod tree;

pub use metagrad::{
    metagrad_replay, metagrad_replay_with, metagrad_stepwise, MetagradOptions, MetagradReport, OverflowPolicy,
    TreeOptions,
};
pub use store::{Checkpointable, SpillConfig, StateStore};
pub use tree::{live_bound, replay_bound, tree_depth, CheckpointTree, TreeStats};
