//! Seeded random streams.
//!
//! Every stochastic routine takes an explicit generator so that runs are
//! reproducible from a single master seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub type PolicyRng = ChaCha8Rng;

pub fn seeded(seed: u64) -> PolicyRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream for task `index` under `seed` (splitmix64 mixing).
pub fn substream(seed: u64, index: u64) -> PolicyRng {
    let mut z = seed ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    seeded(z ^ (z >> 31))
}

#[inline]
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
