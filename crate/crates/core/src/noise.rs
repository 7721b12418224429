//! Seeded noise streams for reparameterized sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

/// Supplies standard-normal noise tensors, one draw per call.
pub trait NoiseSource {
    fn draw(&mut self, rows: usize, cols: usize) -> Tensor;
}

/// Mixes a base seed with a stream index so independent streams never share state.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Single stream; tensors are filled row-major.
#[derive(Debug, Clone)]
pub struct GaussianNoise {
    rng: ChaCha8Rng,
}

impl GaussianNoise {
    pub fn new(seed: u64) -> Self {
        GaussianNoise { rng: rng_from(seed) }
    }
}

impl NoiseSource for GaussianNoise {
    fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut self.rng)).collect();
        Tensor::matrix(rows, cols, data).expect("noise shape")
    }
}

/// All-zero noise: every sample collapses to its mean.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseSource for ZeroNoise {
    fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        Tensor::zeros(&[rows, cols])
    }
}

/// One independent stream per batch row, so a row's draws do not depend
/// on what else shares the batch.
#[derive(Debug, Clone)]
pub struct PerRowNoise {
    rngs: Vec<ChaCha8Rng>,
}

impl PerRowNoise {
    pub fn new(seeds: &[u64]) -> Self {
        PerRowNoise {
            rngs: seeds.iter().map(|&s| rng_from(s)).collect(),
        }
    }
}

impl NoiseSource for PerRowNoise {
    fn draw(&mut self, rows: usize, cols: usize) -> Tensor {
        assert_eq!(rows, self.rngs.len(), "one stream per row");
        let mut data = Vec::with_capacity(rows * cols);
        for rng in &mut self.rngs {
            data.extend((0..cols).map(|_| -> f64 { StandardNormal.sample(rng) }));
        }
        Tensor::matrix(rows, cols, data).expect("noise shape")
    }
}
