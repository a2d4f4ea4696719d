//! Seeded, counter-based randomness and low-discrepancy sequences.
//!
//! Every item i of an ensemble draws from its own ChaCha stream, so the values
//! do not depend on the order (or the thread) in which items are generated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The generator for item `index` under `seed`.
pub fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// `n` uniform draws in [lo, hi) for item `index`.
pub fn uniforms(seed: u64, index: u64, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut rng = stream(seed, index);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Additive recurrence (R-sequence) in [0,1)^dim with a seeded offset.
#[derive(Clone, Debug)]
pub struct LowDiscrepancy {
    alpha: Vec<f64>,
    offset: Vec<f64>,
}

impl LowDiscrepancy {
    pub fn new(dim: usize, seed: u64) -> LowDiscrepancy {
        // φ_d is the unique positive root of x^{d+1} = x + 1.
        let mut phi = 2.0f64;
        for _ in 0..64 {
            phi = (1.0 + phi).powf(1.0 / (dim as f64 + 1.0));
        }
        let alpha = (1..=dim).map(|k| phi.powi(-(k as i32)).fract()).collect();
        let offset = uniforms(seed, u64::MAX, dim, 0.0, 1.0);
        LowDiscrepancy { alpha, offset }
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.offset)
            .map(|(a, o)| (o + a * (i as f64 + 1.0)).fract())
            .collect()
    }
}
