//! Seeded synthetic tensors for tests, benchmarks and the CLI.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::matrix::WeightMatrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `N(0, sigma^2)` entries.
pub fn gaussian_matrix(rows: usize, cols: usize, sigma: f32, seed: u64) -> WeightMatrix {
    let mut rng = rng(seed);
    gaussian_matrix_with(&mut rng, rows, cols, sigma)
}

pub fn gaussian_matrix_with<R: Rng>(rng: &mut R, rows: usize, cols: usize, sigma: f32) -> WeightMatrix {
    let normal = Normal::new(0.0f32, sigma).expect("sigma must be finite and non-negative");
    let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    WeightMatrix::from_parts(rows, cols, data)
}

/// Uniform entries in `[lo, hi)`.
pub fn uniform_matrix_with<R: Rng>(rng: &mut R, rows: usize, cols: usize, lo: f32, hi: f32) -> WeightMatrix {
    let data = (0..rows * cols).map(|_| rng.random_range(lo..hi)).collect();
    WeightMatrix::from_parts(rows, cols, data)
}

/// Random codes in `[0, 2^bits)`.
pub fn random_codes<R: Rng>(rng: &mut R, len: usize, bits: u32) -> Vec<u8> {
    (0..len).map(|_| rng.random_range(0..(1u32 << bits)) as u8).collect()
}

/// Activations with AR(1) correlation `rho` along the feature axis and a
/// log-normal scale per feature. `X^T X` of these is badly conditioned.
pub fn correlated_activations<R: Rng>(rng: &mut R, samples: usize, features: usize, rho: f32) -> WeightMatrix {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let scales: Vec<f32> = (0..features).map(|_| normal.sample(rng).exp()).collect();
    let innov = (1.0 - rho * rho).sqrt();
    let mut data = Vec::with_capacity(samples * features);
    for _ in 0..samples {
        let mut prev = normal.sample(rng);
        for &s in &scales {
            data.push(prev * s);
            prev = rho * prev + innov * normal.sample(rng);
        }
    }
    WeightMatrix::from_parts(samples, features, data)
}

/// Low-rank activations `Z A + noise * N` with `rank` shared factors, giving
/// a Hessian with a few dominant directions and long-range coupling.
pub fn low_rank_activations<R: Rng>(
    rng: &mut R,
    samples: usize,
    features: usize,
    rank: usize,
    noise: f32,
) -> WeightMatrix {
    let normal = Normal::new(0.0f32, 1.0).unwrap();
    let mix: Vec<f32> = (0..rank * features).map(|_| normal.sample(rng)).collect();
    let mut data = Vec::with_capacity(samples * features);
    let mut z = vec![0f32; rank];
    for _ in 0..samples {
        z.iter_mut().for_each(|v| *v = normal.sample(rng));
        for c in 0..features {
            let mut v = noise * normal.sample(rng);
            for (r, zr) in z.iter().enumerate() {
                v += zr * mix[r * features + c];
            }
            data.push(v);
        }
    }
    WeightMatrix::from_parts(samples, features, data)
}
