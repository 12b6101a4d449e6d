//! Seed derivation and random streams.
//!
//! All stochastic operations take an explicit RNG. Sub-streams are derived
//! from a root seed by hashing (root, tag words...) through SplitMix64, so
//! per-class / per-sample / per-step streams are independent of iteration
//! order and safe to consume concurrently.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_CLASS: u64 = 0xC1A5;
pub const DOMAIN_SAMPLE: u64 = 0x5A3B1E;
pub const DOMAIN_BACKBONE: u64 = 0xBACB0;
pub const DOMAIN_ADAPTOR: u64 = 0xADA9;
pub const DOMAIN_DISC: u64 = 0xD15C;
pub const DOMAIN_EPOCH: u64 = 0xE90C;
pub const DOMAIN_STEP: u64 = 0x57E9;
pub const DOMAIN_SHOT: u64 = 0x5807;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Mix a root seed with tag words into a derived 64-bit seed.
pub fn derive_seed(root: u64, words: &[u64]) -> u64 {
    let mut state = root;
    let mut out = splitmix64(&mut state);
    for &w in words {
        state ^= w;
        out ^= splitmix64(&mut state);
    }
    out
}

/// Deterministic stream for a derived seed.
pub fn stream(root: u64, words: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, words))
}
