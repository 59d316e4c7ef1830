//! Metagradient descent loops: data selection, data poisoning and
//! learning-rate schedule search.

mod lr;
mod poison;
mod selection;

pub use lr::{flat_keypoints, lr_grid_search, optimize_lr_schedule, LrConfig, LrResult, LrRound};
pub use poison::{
    constraint_violations, poison_mgd, poison_transfer_eval, project_samples, project_simplex, PoisonConfig,
    PoisonProblem, PoisonResult, PoisonRound, TransferReport, TransferRow,
};
pub use selection::{
    counts_update, fix_size, random_subset_counts, select_data_mgd, surrogate_metagrad, DataCounts, SelectionConfig,
    SelectionProblem, SelectionResult, SelectionRound,
};

/// Sign with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn fmt_f64(x: f64) -> String {
    format!("{x:?}")
}
