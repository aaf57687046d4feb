//! Counter-based random streams.
//!
//! Each particle draws from its own ChaCha8 stream selected by
//! `(master_seed, particle_id)`, so an ensemble produces identical numbers
//! whatever order or thread the particles run on.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Source of the random inputs consumed by the particle stepper.
pub trait NoiseSource {
    fn standard_normal(&mut self) -> f64;
    /// Uniform draw on `[0, 1)`.
    fn uniform(&mut self) -> f64;
}

/// ChaCha8 stream for one particle.
#[derive(Debug, Clone)]
pub struct StreamNoise(ChaCha8Rng);

impl StreamNoise {
    pub fn new(master_seed: u64, particle_id: u64) -> Self {
        let mut rng = ChaCha8Rng::from_seed(expand_seed(master_seed));
        rng.set_stream(particle_id);
        Self(rng)
    }
}

impl NoiseSource for StreamNoise {
    #[inline]
    fn standard_normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    #[inline]
    fn uniform(&mut self) -> f64 {
        self.0.random::<f64>()
    }
}

/// Noise switched off: every normal draw is zero, every uniform is 1/2.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn standard_normal(&mut self) -> f64 {
        0.0
    }

    fn uniform(&mut self) -> f64 {
        0.5
    }
}

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent seed from a master seed and a key.
pub fn derive_seed(master_seed: u64, key: u64) -> u64 {
    mix64(mix64(master_seed) ^ key.wrapping_mul(0xd1b5_4a32_d192_ed03))
}

fn expand_seed(seed: u64) -> [u8; 32] {
    let mut out = [0u8; 32];
    let mut s = seed;
    for chunk in out.chunks_exact_mut(8) {
        s = mix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    out
}
