//! Named deterministic random substreams.
//!
//! Every random draw in the crate comes from `substream(seed, label)`, so
//! results never depend on the order in which independent work is scheduled.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stable 64-bit FNV-1a hash of a string.
pub fn stable_hash(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

/// A generator keyed by `(seed, label)`, e.g. `"augment/pass3/doc42"`.
pub fn substream(seed: u64, label: &str) -> Rng {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write(label.as_bytes());
    ChaCha8Rng::seed_from_u64(h.finish())
}

/// Derive a child seed from a parent seed and a label.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write_u64(seed);
    h.write(b"/seed/");
    h.write(label.as_bytes());
    h.finish()
}
