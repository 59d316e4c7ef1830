//! Datasets: synthetic generation, IDX/CSV loading, splitting.

mod dataset;
mod io;
pub mod rng;
mod synthetic;

pub use dataset::{argmax as argmax_row, split, split_indices, Dataset, Task};
pub use io::{load_csv, load_idx, load_idx_or_csv, write_csv};
pub use synthetic::{flip_labels, gen_synthetic, SyntheticKind};
