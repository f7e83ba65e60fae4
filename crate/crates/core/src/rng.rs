//! Seed derivation. All randomness in the crate flows from a master seed
//! through these helpers into ChaCha8 streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SeededRng = ChaCha8Rng;

/// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent subseed from a parent seed, a domain tag and an index.
pub fn subseed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h = mix(seed);
    for b in tag.bytes() {
        h = mix(h ^ u64::from(b));
    }
    mix(h ^ mix(index))
}

pub fn rng_for(seed: u64, tag: &str, index: u64) -> SeededRng {
    SeededRng::seed_from_u64(subseed(seed, tag, index))
}
