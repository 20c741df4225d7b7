//! Synthetic layers with heavy-tailed input-channel scales.

use crvq_core::rng::derive_seed;
use crvq_core::WeightMatrix;

const NOISE_STREAM: u64 = 1 << 20;
const SCALE_STREAM: u64 = (1 << 20) + 1;

/// `W[i][j] = z[i][j] · exp(sigma · u[j])` with `z`, `u` standard normal, so
/// column scales are log-normal with shape `sigma`.
pub fn heavy_tailed_layer(rows: usize, cols: usize, sigma: f64, seed: u64) -> WeightMatrix {
    let z = WeightMatrix::gaussian(rows, cols, derive_seed(seed, NOISE_STREAM));
    let u = WeightMatrix::gaussian(1, cols, derive_seed(seed, SCALE_STREAM));
    let scales: Vec<f64> = u.data().iter().map(|&v| (sigma * v as f64).exp()).collect();
    WeightMatrix::from_fn(rows, cols, |r, c| (z.get(r, c) as f64 * scales[c]) as f32)
}
