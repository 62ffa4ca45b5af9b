//! Seed derivation. Every stochastic component gets its own stream derived
//! from the experiment seed and a fixed tuple of identifiers, so results do
//! not depend on execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream tags for the engine's independent random streams.
pub mod stream {
    pub const INIT: u64 = 1;
    pub const PARTITION: u64 = 2;
    pub const ATTACKERS: u64 = 3;
    pub const SPLIT: u64 = 4;
    pub const PARTICIPATION: u64 = 5;
    pub const CLIENT: u64 = 6;
    pub const NOISE: u64 = 7;
    pub const SWEEP: u64 = 8;
    pub const METAVAL: u64 = 9;
    pub const SYNTH: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with each part in order. Stable across platforms and releases.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng_from(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_rng(base: u64, parts: &[u64]) -> SimRng {
    rng_from(derive_seed(base, parts))
}
