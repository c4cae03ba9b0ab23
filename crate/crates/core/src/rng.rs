//! Counter-based seed derivation. Every randomized unit of work (replicate,
//! study, sweep cell) gets its own stream derived from the master seed and its
//! coordinates, so results do not depend on worker count or schedule.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Derive a generator from a master seed and a path of stream indices.
pub fn stream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(master ^ 0x6A09_E667_F3BC_C908);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    ChaCha8Rng::seed_from_u64(state)
}
