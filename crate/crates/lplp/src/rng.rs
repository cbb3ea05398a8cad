//! Seed derivation for reproducible sub-streams.
//!
//! Every randomized component (dataset pools, bag composition, parameter
//! init, epoch shuffling) gets its own `ChaCha8Rng` derived from a base seed
//! plus a role tag, so adding a consumer never perturbs the streams of the
//! others.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; decorrelates nearby seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed, a role tag, and an index.
pub fn derive_seed(base: u64, tag: &str, index: u64) -> u64 {
    let mut acc = mix(base);
    for &b in tag.as_bytes() {
        acc = mix(acc ^ u64::from(b));
    }
    mix(acc ^ index)
}

/// Deterministic RNG for a (base seed, role, index) triple.
pub fn stream(base: u64, tag: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tag, index))
}
