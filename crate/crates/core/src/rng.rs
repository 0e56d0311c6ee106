//! Seeded random streams.
//!
//! Every chain owns one ChaCha20 stream seeded from a `u64`. Gaussian draws go
//! through `rand_distr::StandardNormal` (ziggurat), which is pure integer and
//! float arithmetic, so records reproduce bit-for-bit across platforms.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

pub type ChainRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> ChainRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Independent stream for replicate/stream `index` derived from a base seed.
pub fn substream(seed: u64, index: u64) -> ChainRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.random::<f64>()
}
