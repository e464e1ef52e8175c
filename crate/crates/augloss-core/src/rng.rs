//! Seed derivation helpers.
//!
//! All stochastic operations in this crate take an explicit `u64` seed and
//! derive independent streams from it with [`derive_seed`], so a run is
//! reproducible from a single root seed no matter how work is subdivided.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent sub-seed from `seed` and a list of stream tags
/// (module constants, loop indices, ...). Different tag sequences yield
/// uncorrelated streams.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ t.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    s
}

/// Seeded generator used throughout the crate.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
