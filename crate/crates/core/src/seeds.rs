//! Deterministic seed streams.
//!
//! Every randomized task (a k-means restart, one isolation tree, one forest
//! tree, a fold shuffle) draws from its own generator whose seed is derived
//! from `(master seed, stream tag, index)`. Results therefore do not depend on
//! how rayon schedules the tasks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

pub(crate) const KMEANS: u64 = 0x6b6d_6561_6e73;
pub(crate) const IFOREST: u64 = 0x6966_6f72_6573;
pub(crate) const FOREST: u64 = 0x7266_6f72_6573;
pub(crate) const FOLDS: u64 = 0x666f_6c64_7321;
pub(crate) const SYNTH: u64 = 0x7379_6e74_6821;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn derive(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(splitmix64(master ^ splitmix64(stream)).wrapping_add(index))
}

pub fn rng(master: u64, stream: u64, index: u64) -> Rng {
    from_derived(derive(master, stream, index))
}

pub fn from_derived(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
