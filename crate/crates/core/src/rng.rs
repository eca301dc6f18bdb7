//! Seeded randomness.
//!
//! All randomness in the crate flows through [`ChaCha8Rng`] instances built
//! from explicit seeds. Per-item generators are derived from a master seed by
//! a counter-based mix, so the stream an item sees never depends on how many
//! items are drawn or how they are batched.

use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Named sub-streams, so that e.g. initial sampler noise and metric
/// subsampling drawn from the same master seed never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    SamplerNoise = 1,
    Subsample = 2,
    Training = 3,
    Split = 4,
    Augment = 5,
    Features = 6,
    Dataset = 7,
    Sweep = 8,
    Init = 9,
    Protocol = 10,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed for `(stream, index)` under `master`.
pub fn derive_seed(master: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(master ^ splitmix64(stream as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    rng_from_seed(derive_seed(master, stream, index))
}

pub fn normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn fill_normal<R: rand::Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = StandardNormal.sample(rng);
    }
}
