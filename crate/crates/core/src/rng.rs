//! Seeded random streams.
//!
//! Every stochastic component draws from a ChaCha stream derived from the run
//! seed and a stream name, so switching one component (say the mining
//! strategy) leaves the draws of every other component untouched.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Stream for synthetic scene generation.
pub const DATA: &str = "data";
/// Stream for parameter initialization.
pub const INIT: &str = "init";
/// Stream for point/image triplet sampling.
pub const MINING: &str = "mining";
/// Stream for K-means seeding.
pub const KMEANS: &str = "kmeans";
/// Stream for epoch shuffling.
pub const ORDER: &str = "order";
/// Stream for training-time augmentation.
pub const AUGMENT: &str = "augment";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a 64-bit seed from a parent seed and a stream name.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(name)))
}

/// Opens the named substream of `seed`.
pub fn stream(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(derive_seed(seed, name))
}

/// Opens an indexed child of a named substream (per-scene, per-epoch, ...).
pub fn substream(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(splitmix64(derive_seed(seed, name) ^ splitmix64(index)))
}
