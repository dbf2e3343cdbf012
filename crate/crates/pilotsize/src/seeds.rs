//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from a single master seed. Each stage
//! derives its own seed from `(master, label, counter)` through a fixed hash
//! chain, so stages can run in parallel, in any order, or in isolation and
//! still reproduce bit-identical results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a child seed for a labeled, counted task.
pub fn derive(master: u64, label: &str, counter: u64) -> u64 {
    splitmix64(splitmix64(master ^ fnv1a(label)).wrapping_add(counter))
}

/// Builds the RNG for a labeled, counted task.
pub fn rng(master: u64, label: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, label, counter))
}
