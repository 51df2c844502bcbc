//! Seeded random streams.
//!
//! Every randomized stage draws from its own ChaCha stream keyed on
//! `(seed, purpose, index)`, so results do not depend on the order in which
//! parallel workers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream purposes. Distinct tags keep unrelated stages from sharing streams.
pub mod tag {
    pub const REGRESSION_TREE: u64 = 0x5245_4754;
    pub const MATCHER_TREE: u64 = 0x4d41_5443;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const KMEANS: u64 = 0x4b4d_4e53;
    pub const SYNTH: u64 = 0x5359_4e54;
    pub const CV: u64 = 0x4356_4356;
    pub const CLASS: u64 = 0x434c_4153;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with a purpose tag and an index into a new seed.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(tag)) ^ index.wrapping_mul(0xd6e8_feb8_6659_fd93))
}

pub fn stream(seed: u64, tag: u64, index: u64) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(seed, tag, index))
}
