//! One module per subcommand. Each writes its run directory and returns it.

pub mod bench;
pub mod check;
pub mod lr;
pub mod poison;
pub mod scan;
pub mod select;

use clap::ValueEnum;

/// Test hooks that make a run fail in a known way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    /// Perturb re-executed training steps so replay detects nondeterminism.
    Replay,
}

/// Shortest representation that parses back to the same value.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}
