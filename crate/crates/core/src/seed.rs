//! Named random sub-streams derived from one root seed.
//!
//! ChaCha8 is used everywhere so that a seed reproduces the same draws on every
//! platform and toolchain.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 42;

pub const STREAM_SPLIT: &str = "split";
pub const STREAM_FOLDS: &str = "folds";
pub const STREAM_RANDOM_BASELINE: &str = "random-baseline";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `name` of `root`. Distinct names give independent streams.
pub fn derive_seed(root: u64, name: &str) -> u64 {
    // FNV-1a over the stream name
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(root ^ splitmix64(h))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(root: u64, name: &str) -> ChaCha8Rng {
    rng(derive_seed(root, name))
}
