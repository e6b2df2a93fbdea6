//! Deterministic, domain-separated random streams.
//!
//! Every consumer derives its generator from `(seed, domain, index)`, so a
//! row's or trial's randomness never depends on how many other rows or
//! trials exist, nor on the order they are evaluated in.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Distinct consumers of a user seed. Values are arbitrary but fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    MechanismNoise = 0x6d65_6368,
    TieJitter = 0x6a69_7474,
    TeacherWeights = 0x7465_6163,
    IndependentWeights = 0x696e_6465,
    QueryInputs = 0x7175_6572,
    QueryNoise = 0x716e_6f69,
    VerificationInputs = 0x7665_7269,
    Decorrelation = 0x6465_636f,
    HoldoutInputs = 0x686f_6c64,
    MonteCarlo = 0x6d63_6172,
    Synthetic = 0x7379_6e74,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Generator for item `index` of `domain` under `seed`.
pub fn stream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain as u64)));
    rng.set_stream(index);
    rng
}

/// Derive a child seed, e.g. one per Monte-Carlo trial.
pub fn derive_seed(seed: u64, domain: Domain, index: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(domain as u64)) ^ splitmix64(index))
}
