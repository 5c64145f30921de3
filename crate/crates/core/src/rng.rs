//! Keyed random streams.
//!
//! Every stochastic quantity (memories, initial states, visit orders, weight
//! initialization, shuffles) draws from its own ChaCha8 stream whose key is a
//! hash of the global seed and a short tuple of integers naming the quantity.
//! ChaCha is counter based, so streams are independent of the order in which
//! worker threads create them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags so that, e.g., trial 3's initial state never shares a stream
/// with memory set 3.
pub mod tag {
    pub const MEMORIES: u64 = 0x4d45_4d53;
    pub const TRIAL: u64 = 0x5452_494c;
    pub const INIT_WEIGHTS: u64 = 0x494e_4954;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const MINIBATCH: u64 = 0x4241_5443;
    pub const DYNAMICS: u64 = 0x4459_4e41;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the stream for `(seed, keys...)`.
pub fn stream_rng(seed: u64, keys: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &k in keys {
        h = splitmix64(h ^ splitmix64(k));
    }
    let mut bytes = [0u8; 32];
    let mut lane = h;
    for chunk in bytes.chunks_exact_mut(8) {
        lane = splitmix64(lane);
        chunk.copy_from_slice(&lane.to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
