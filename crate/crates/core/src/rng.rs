//! Splittable deterministic random streams.
//!
//! Every random draw in the crate comes from a [`Stream`] keyed by a
//! top-level seed and a path of integer labels (jet index, node path,
//! particle, rank, ...). Two streams with different paths are independent
//! for all practical purposes, and the value of a stream never depends on
//! the order in which other streams were consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Labels used as the first path element to separate stream families.
pub mod domain {
    pub const JET: u64 = 0x4a45_5400;
    pub const RESAMPLE: u64 = 0x5245_5300;
    pub const PROPOSE: u64 = 0x5052_4f00;
    pub const LAMBDA: u64 = 0x4c41_4d00;
    pub const RUN: u64 = 0x5255_4e00;
    pub const STEP: u64 = 0x5354_4500;
    pub const DATASET: u64 = 0x4441_5400;
}

pub type Stream = ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a 64-bit key from a seed and a path of labels.
pub fn derive_key(seed: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(seed), |acc, &label| {
        splitmix64(acc ^ splitmix64(label.wrapping_add(0x632B_E59B_D9B4_E019)))
    })
}

/// Open the stream identified by `(seed, path)`.
pub fn stream(seed: u64, path: &[u64]) -> Stream {
    let k0 = derive_key(seed, path);
    let mut key = [0u8; 32];
    let mut x = k0;
    for chunk in key.chunks_mut(8) {
        x = splitmix64(x);
        chunk.copy_from_slice(&x.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
