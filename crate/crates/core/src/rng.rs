//! Seeded random streams.
//!
//! Every source of randomness (synthetic data, parameter init, shuffling,
//! latent noise) draws from its own [`FlowRng`] stream derived from one root
//! seed. The generator is xoshiro256++ (state expanded from the 64-bit seed
//! with SplitMix64), which uses only portable 64-bit integer arithmetic, so a
//! seed reproduces the same stream on every platform.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;

/// Purpose tags used to split one root seed into independent streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Synth = 1,
    Init = 2,
    Shuffle = 3,
    Noise = 4,
}

#[derive(Clone, Debug)]
pub struct FlowRng(Xoshiro256PlusPlus);

impl FlowRng {
    pub fn new(seed: u64) -> Self {
        Self(Xoshiro256PlusPlus::seed_from_u64(seed))
    }

    /// Independent stream for `purpose` under `root`.
    pub fn stream(root: u64, purpose: Stream) -> Self {
        // Golden-ratio increment keeps nearby roots on unrelated streams.
        let mixed = root ^ (purpose as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        Self::new(mixed)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.0.random::<f64>()
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.0.sample(StandardNormal)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.0.random::<f64>()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.0);
    }
}
