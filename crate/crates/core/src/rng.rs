//! Seed derivation and random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by a 64-bit seed.
//! Independent sub-streams (plans, noise, latents, per-trial draws) are keyed by
//! [`derive_seed`], so results do not depend on execution order or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose tags for derived streams.
pub mod purpose {
    pub const PLAN: u64 = 0x706c_616e;
    pub const NOISE: u64 = 0x6e6f_6973;
    pub const LATENT: u64 = 0x6c61_7465;
    pub const TRIAL: u64 = 0x7472_6961;
    pub const RESTART: u64 = 0x7265_7374;
    pub const PROBE: u64 = 0x7072_6f62;
    pub const CONE: u64 = 0x636f_6e65;
    pub const FAMILY: u64 = 0x6661_6d69;
    pub const TARGET: u64 = 0x7461_7267;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives a child seed from a parent seed, a purpose tag and an index.
pub fn derive_seed(seed: u64, purpose: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ purpose) ^ index)
}

/// Derives a seed from a string label (e.g. a condition id).
pub fn label_seed(seed: u64, label: &str) -> u64 {
    label
        .bytes()
        .fold(splitmix64(seed ^ 0x6c61_6265_6c00), |acc, b| {
            splitmix64(acc ^ u64::from(b))
        })
}

pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn derived_stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    stream(derive_seed(seed, purpose, index))
}

pub fn gaussian_vec<R: Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}
