//! Seed splitting.
//!
//! Every random stream is keyed by `(root seed, domain, index)`. The key is
//! hashed with SplitMix64 into a 32-byte ChaCha8 seed, so streams for
//! different chains, station rows or replicates never depend on the order in
//! which they are created or on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named stream families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Chain = 1,
    DeltaRowY = 2,
    DeltaRowX = 3,
    Synthetic = 4,
    Predictive = 5,
    Replicate = 6,
    Geweke = 7,
    Missingness = 8,
}

#[inline]
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from a parent seed.
pub fn child_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ splitmix64(index.wrapping_add(0x5851_F42D)))
}

/// Independent generator for `(seed, domain, index)`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut state = child_seed(seed, domain, index);
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
