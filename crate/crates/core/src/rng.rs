//! Seeded random sources.
//!
//! Every stochastic operation takes an explicit `&mut impl Rng`. Runs derive
//! child streams from a master seed so that parallel or reordered work never
//! shares a generator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used for all reproducible runs.
pub type SeededRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `(stream, index)` under `master`.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(stream ^ splitmix64(index)))
}
