//! Sub-seed derivation. Every random stream in the pipeline is keyed by a
//! root seed plus an index path, e.g. `(root, [MODEL, model_index, layer])`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_INIT: u64 = 1;
pub const DOMAIN_SHUFFLE: u64 = 2;
pub const DOMAIN_DROPOUT: u64 = 3;
pub const DOMAIN_SPLIT: u64 = 4;
pub const DOMAIN_MODEL: u64 = 5;
pub const DOMAIN_ITERATION: u64 = 6;
pub const DOMAIN_ARGS: u64 = 7;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive_seed(root: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(root), |acc, &i| splitmix64(acc.rotate_left(23) ^ splitmix64(i)))
}

pub fn rng(root: u64, path: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, path))
}
