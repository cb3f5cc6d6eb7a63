//! Counter-based RNG streams. Every random draw in training is taken from a
//! stream keyed by `(seed, tags...)`, so results do not depend on the order
//! in which streams are consumed and resuming only needs the step counter.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags kept distinct so unrelated draws never share a stream.
pub mod tag {
    pub const TRACE: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const BATCH: u64 = 3;
    pub const EVAL: u64 = 4;
    pub const ANALYSIS: u64 = 5;
    pub const INIT: u64 = 6;
    pub const DATA: u64 = 7;
    pub const ORACLE: u64 = 8;
    pub const WARMUP: u64 = 9;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a seed and a list of tags into a 64-bit stream id.
pub fn stream_id(seed: u64, tags: &[u64]) -> u64 {
    tags.iter().fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

pub fn stream(seed: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(stream_id(seed, tags))
}

pub fn from_id(id: u64) -> StreamRng {
    StreamRng::seed_from_u64(id)
}
