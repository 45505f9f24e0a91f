//! Seed derivation for independent, reproducible random streams.
//!
//! Every stochastic decision in the crate draws from a ChaCha stream whose
//! seed is a pure function of a base seed and a list of integer tags
//! (step, sample index, purpose). Re-running with the same tags reproduces
//! the same draws regardless of call order, worker count, or resumption.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes; distinct tags keep streams independent.
pub mod tag {
    pub const AUGMENT: u64 = 1;
    pub const MASK_RGB: u64 = 2;
    pub const MASK_OTHER: u64 = 3;
    pub const SUBSTITUTE: u64 = 4;
    pub const NEGATIVES: u64 = 5;
    pub const DROPOUT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const INIT: u64 = 8;
    pub const SPLIT: u64 = 9;
    pub const SYNTH: u64 = 10;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn stream(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}
