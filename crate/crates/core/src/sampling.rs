//! Reproducible Monte Carlo: block-structured ChaCha streams and ordered reduction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Samples per block. Each block draws from its own ChaCha stream, so results
/// do not depend on how blocks are scheduled across threads.
pub const BLOCK: usize = 4096;

/// Seed plus stream position (counted in blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerState {
    pub seed: u64,
    pub counter: u64,
}

impl SamplerState {
    pub fn new(seed: u64) -> Self {
        Self { seed, counter: 0 }
    }

    /// Independent state for a labelled sub-computation (e.g. one quadrature node).
    pub fn fork(&self, label: u64) -> Self {
        let mixed = splitmix(self.seed ^ splitmix(label.wrapping_add(self.counter)));
        Self { seed: mixed, counter: 0 }
    }

    /// Reserve `n` samples; returns the index of the first block.
    pub fn take(&mut self, n: usize) -> u64 {
        let first = self.counter;
        self.counter += n.div_ceil(BLOCK) as u64;
        first
    }

    pub fn block_rng(&self, block: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(block);
        rng
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mean with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn std_error(&self) -> f64 {
        self.half_width / 1.959_963_984_540_054
    }
}

/// Estimate `E[g(Z)]` for `Z ~ N(0, I_dim)` from `n` draws.
pub fn normal_expectation<G>(state: &mut SamplerState, n: usize, dim: usize, g: G) -> McEstimate
where
    G: Fn(&[f64]) -> f64 + Sync,
{
    let first = state.take(n);
    let blocks = n.div_ceil(BLOCK);
    let st = *state;
    let partial: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = st.block_rng(first + b as u64);
            let count = BLOCK.min(n - b * BLOCK);
            let mut z = vec![0.0; dim];
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                let v = g(&z);
                s1 += v;
                s2 += v * v;
            }
            (s1, s2)
        })
        .collect();
    summarize(&partial, n)
}

/// Combine per-block `(Σv, Σv²)` in index order.
pub fn summarize(partial: &[(f64, f64)], n: usize) -> McEstimate {
    let (s1, s2) = partial
        .iter()
        .fold((0.0, 0.0), |acc, p| (acc.0 + p.0, acc.1 + p.1));
    let nf = n as f64;
    let mean = s1 / nf;
    let var = if n > 1 {
        ((s2 - nf * mean * mean) / (nf - 1.0)).max(0.0)
    } else {
        0.0
    };
    McEstimate {
        mean,
        half_width: 1.959_963_984_540_054 * (var / nf).sqrt(),
        n,
    }
}

/// `n` standard normal vectors of length `dim`, row-major.
pub fn standard_normals(state: &mut SamplerState, n: usize, dim: usize) -> Vec<f64> {
    let first = state.take(n);
    let mut out = vec![0.0; n * dim];
    for (b, chunk) in out.chunks_mut(BLOCK * dim).enumerate() {
        let mut rng = state.block_rng(first + b as u64);
        for v in chunk.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    out
}
