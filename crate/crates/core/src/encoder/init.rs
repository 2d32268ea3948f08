use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

/// Map a raw 64-bit draw onto `[-0.1, 0.1)`.
pub fn uniform_weight(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64) * 0.2 - 0.1
}

/// SplitMix64 stream of initial weights. The state starts at the seed itself.
pub struct WeightStream {
    rng: SplitMix64,
}

impl WeightStream {
    pub fn new(seed: u64) -> Self {
        WeightStream {
            rng: SplitMix64::from_seed(seed.to_le_bytes()),
        }
    }

    pub fn next_weight(&mut self) -> f64 {
        uniform_weight(self.rng.next_u64())
    }
}
