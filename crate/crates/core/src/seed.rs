//! Labeled seed derivation.
//!
//! Every random stream is derived from a master seed and a label, so adding a
//! consumer of randomness never perturbs the streams of existing consumers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Seed of the stream `label` under `master`.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    splitmix64(splitmix64(master) ^ fnv1a(label))
}

/// Seed of the `index`-th member of a labeled family (episodes, minibatches).
pub fn derive_indexed(master: u64, label: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, label) ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn labeled_rng(master: u64, label: &str) -> Rng {
    rng_from_seed(derive_seed(master, label))
}
