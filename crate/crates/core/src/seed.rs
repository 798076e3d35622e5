//! Counter-based seed splitting.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the
//! root seed, a purpose tag and an index, so the values one consumer sees
//! never depend on how many draws another consumer made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    EnvReset = 2,
    Evader = 3,
    Sampling = 4,
    Shuffle = 5,
    Evaluation = 6,
    Baseline = 7,
}

pub fn rng_for(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root);
    rng.set_stream(((stream as u64) << 56) ^ index);
    rng
}

/// Mixes `(root, index)` into a fresh 64-bit seed (SplitMix64 finalizer).
pub fn child_seed(root: u64, index: u64) -> u64 {
    let mut z = root ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
