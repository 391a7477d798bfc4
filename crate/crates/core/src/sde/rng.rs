//! Reproducible per-path randomness.
//!
//! Every path owns a ChaCha8 stream (a counter-based generator) whose 64-bit
//! seed is derived from `(base_seed, path_index)` by SplitMix64 mixing, so an
//! ensemble gives the same paths in any execution order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const RNG_ALGORITHM: &str =
    "ChaCha8 (rand_chacha 0.9) per path, seed = SplitMix64(base_seed XOR SplitMix64(path_index + golden gamma)); normals by ziggurat (rand_distr StandardNormal)";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_seed(base_seed: u64, path_index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(path_index.wrapping_add(GOLDEN_GAMMA)))
}

/// Source of Brownian increments, one vector of length `m` per step.
pub trait IncrementSource {
    fn next_increment(&mut self, dt: f64, out: &mut [f64]);
}

pub struct GaussianIncrements {
    rng: ChaCha8Rng,
}

impl GaussianIncrements {
    pub fn new(seed: u64) -> Self {
        GaussianIncrements {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl IncrementSource for GaussianIncrements {
    fn next_increment(&mut self, dt: f64, out: &mut [f64]) {
        let s = dt.sqrt();
        for o in out.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            *o = s * z;
        }
    }
}

/// Replays increments stored row by row (`m` values per step).
pub struct RecordedIncrements<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> RecordedIncrements<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        RecordedIncrements { data, pos: 0 }
    }
}

impl IncrementSource for RecordedIncrements<'_> {
    fn next_increment(&mut self, _dt: f64, out: &mut [f64]) {
        let m = out.len();
        out.copy_from_slice(&self.data[self.pos..self.pos + m]);
        self.pos += m;
    }
}

/// `n_steps` Gaussian increment rows of width `m` at step `dt`.
pub fn brownian_increments(seed: u64, dt: f64, n_steps: usize, m: usize) -> Vec<f64> {
    let mut src = GaussianIncrements::new(seed);
    let mut out = vec![0.0; n_steps * m];
    for row in out.chunks_mut(m.max(1)) {
        if m > 0 {
            src.next_increment(dt, row);
        }
    }
    out
}

/// Sums blocks of `factor` consecutive rows: the same Brownian path seen at
/// a step `factor` times coarser.
pub fn coarsen_increments(fine: &[f64], m: usize, factor: usize) -> Vec<f64> {
    assert!(factor > 0 && m > 0);
    let rows = fine.len() / m;
    assert_eq!(rows % factor, 0, "row count must be a multiple of the factor");
    let mut out = vec![0.0; rows / factor * m];
    for (r, row) in fine.chunks(m).enumerate() {
        let target = &mut out[(r / factor) * m..(r / factor + 1) * m];
        for (t, v) in target.iter_mut().zip(row) {
            *t += v;
        }
    }
    out
}
