//! Named random streams derived from one master seed.
//!
//! Each consumer asks for its own stream by name, so adding a consumer never
//! shifts the draws of another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub type StreamRng = ChaCha8Rng;

pub fn stream(master: u64, name: &str) -> StreamRng {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Stream for the `index`-th use of `name`, e.g. one per outer round.
pub fn indexed_stream(master: u64, name: &str, index: u64) -> StreamRng {
    stream(master, &format!("{name}#{index}"))
}

/// Derived integer seed, for APIs that take a plain seed.
pub fn derive_seed(master: u64, name: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
