//! Deterministic random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 generator whose 256-bit
//! key is expanded from a master seed and a tuple of stream keys (experiment
//! cell, replicate index, purpose tag) with the SplitMix64 finalizer. Streams
//! depend only on that tuple, so results do not depend on how replicates are
//! scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a master seed and stream keys into a single 64-bit state.
pub fn mix_keys(master: u64, keys: &[u64]) -> u64 {
    keys.iter().fold(splitmix64(master), |acc, &k| {
        splitmix64(acc ^ splitmix64(k.wrapping_add(0x6A09_E667_F3BC_C909)))
    })
}

/// Generator for the stream identified by `(master, keys)`.
pub fn stream(master: u64, keys: &[u64]) -> StreamRng {
    let mut state = mix_keys(master, keys);
    let mut seed = [0u8; 32];
    for chunk in seed.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed)
}

/// Purpose tags so that different consumers of one replicate never share a stream.
pub mod tag {
    pub const LOCATIONS: u64 = 1;
    pub const EXPOSURE: u64 = 2;
    pub const OUTCOME: u64 = 3;
    pub const CALIBRATION: u64 = 4;
    pub const FIELD: u64 = 5;
}
