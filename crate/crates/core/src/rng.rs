//! Seeded random sources and child-seed derivation.
//!
//! Every stochastic stage draws from its own stream derived from a master
//! seed, so results do not depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type SeededRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for stream `index` of purpose `tag` under `master`.
pub fn child_seed(master: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(master);
    for b in tag.bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ splitmix64(index))
}

pub fn child_rng(master: u64, tag: &str, index: u64) -> SeededRng {
    seeded(child_seed(master, tag, index))
}
