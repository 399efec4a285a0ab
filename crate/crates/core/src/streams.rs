//! Seeded, independent RNG substreams.
//!
//! Every random decision in the engine draws from a ChaCha stream derived
//! from `(seed, domain, index)`, so worker gradient sampling, compression
//! randomness, and data generation can be varied independently and results
//! do not depend on worker execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the deterministic substream `(seed, domain, index)`.
pub fn stream(seed: u64, domain: &str, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(seed) ^ fnv1a(domain.as_bytes()) ^ splitmix64(index ^ 0xa076_1d64_78bd_642f));
    ChaCha8Rng::seed_from_u64(mixed)
}
