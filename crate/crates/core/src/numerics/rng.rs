//! Seed derivation. Every stochastic component draws from its own stream so
//! results do not depend on scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a list of stream labels into a child seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels
        .iter()
        .fold(splitmix64(seed), |acc, &l| splitmix64(acc ^ splitmix64(l)))
}

pub fn rng_for(seed: u64, labels: &[u64]) -> SimRng {
    SimRng::seed_from_u64(derive_seed(seed, labels))
}

/// Stream labels used across the crate.
pub mod stream {
    pub const EXTRACTOR: u64 = 1;
    pub const CLASSIFIER: u64 = 2;
    pub const ACTIVE_BATCHES: u64 = 3;
    pub const LOCAL_BATCHES: u64 = 4;
    pub const PROTO_INIT: u64 = 5;
    pub const NOISE_REPS: u64 = 6;
    pub const NOISE_PROTOS: u64 = 7;
    pub const SYNTH: u64 = 8;
    pub const TEST_SPLIT: u64 = 9;
    pub const ALIGN_SPLIT: u64 = 10;
    pub const IMBALANCE: u64 = 11;
    pub const ADAPTOR: u64 = 12;
}
