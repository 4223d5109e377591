//! Seed derivation. Every random stream in a run is a ChaCha generator keyed by
//! a hash of the run seeds and a stream label, so runs are reproducible and
//! streams never alias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RunRng = ChaCha8Rng;

/// SplitMix64 finaliser.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine a seed with a stream label and an index.
pub fn derive(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)).wrapping_add(index))
}

pub fn rng_for(seed: u64, stream: u64, index: u64) -> RunRng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream, index))
}

pub mod streams {
    pub const NET_INIT: u64 = 1;
    pub const PRIOR_INIT: u64 = 2;
    pub const REPLAY: u64 = 3;
    pub const EXPLORATION: u64 = 4;
    pub const UPDATE_NOISE: u64 = 5;
    pub const ENV_EPISODE: u64 = 6;
    pub const TIE_BREAK: u64 = 7;
}
