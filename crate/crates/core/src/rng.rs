//! Seed derivation.
//!
//! Every stochastic step draws from its own ChaCha stream whose seed is a
//! hash of a base seed and a tag path, so results do not depend on the
//! order in which independent steps execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

pub fn rng_for(base: u64, tags: &[u64]) -> SimRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, tags))
}

// Stream tags for the distinct consumers of randomness.
pub(crate) const TAG_PROXY: u64 = 0x5052_4f58;
pub(crate) const TAG_HOLDOUT: u64 = 0x484f_4c44;
pub(crate) const TAG_PARTITION: u64 = 0x5041_5254;
pub(crate) const TAG_SCENARIO: u64 = 0x5343_454e;
pub(crate) const TAG_SELECT: u64 = 0x5345_4c45;
pub(crate) const TAG_LOCAL: u64 = 0x4c4f_4341;
pub(crate) const TAG_DISTILL: u64 = 0x4449_5354;
pub(crate) const TAG_SYNTH: u64 = 0x5359_4e54;
