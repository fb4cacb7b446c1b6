//! Deterministic, splittable random number generation.
//!
//! Every random draw in the project comes from a ChaCha8 stream whose seed is
//! a pure function of a base seed plus context tags (epoch, step, sample,
//! view...). State never needs to be serialized: replaying the same tags
//! reproduces the same stream, which is what makes checkpoint resume
//! trajectory-exact.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for seed mixing.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Folds context tags into a base seed.
pub fn mix(base: u64, tags: &[u64]) -> u64 {
    let mut acc = splitmix64(base);
    for &t in tags {
        acc = splitmix64(acc ^ splitmix64(t));
    }
    acc
}

/// RNG for a (base seed, tags) context.
pub fn rng_for(base: u64, tags: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(base, tags))
}
