//! Reproducible random streams.
//!
//! Every random draw in the crate comes from `ChaCha8Rng::seed_from_u64(seed)`
//! with an explicit stream id selected through `set_stream`:
//!
//! | use                                   | stream id                   |
//! |---------------------------------------|-----------------------------|
//! | `simulate_random`                     | `0`                         |
//! | `uniform_inputs`                      | `1`                         |
//! | excitation, basis input `j`, copy `m` | `((j + 1) << 32) \| m`      |
//! | solver multi-start `k`                | `(1 << 63) \| k`            |
//!
//! Streams are independent, so work units can run in any order or in
//! parallel and still produce identical draws.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIMULATION_STREAM: u64 = 0;
pub const INPUT_STREAM: u64 = 1;

pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn excitation_stream(input: usize, copy: usize) -> u64 {
    debug_assert!(copy < (1 << 32) && input < (1 << 31));
    ((input as u64 + 1) << 32) | copy as u64
}

pub fn multistart_stream(start: usize) -> u64 {
    (1u64 << 63) | start as u64
}

/// Inverse-CDF sampler over mode indices (0-based).
#[derive(Debug, Clone)]
pub struct ModeSampler {
    cumulative: Vec<f64>,
}

impl ModeSampler {
    pub fn new(probs: &[f64]) -> Self {
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p / total;
                acc
            })
            .collect();
        Self { cumulative }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let last = self.cumulative.len() - 1;
        self.cumulative.iter().position(|&c| u < c).unwrap_or(last)
    }
}
