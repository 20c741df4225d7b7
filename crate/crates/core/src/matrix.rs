//! Dense matrices consumed by the quantizer.

use alloc::vec;
use alloc::vec::Vec;

use rand_distr::{Distribution, StandardNormal};

use crate::error::{dim_err, Error, Result};
use crate::linalg::dot;
use crate::rng;

/// A dense row-major `rows x cols` matrix of 32-bit floats.
///
/// Used both for weights (`M x N`) and for calibration activations (`N x O`).
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl WeightMatrix {
    /// Builds a matrix, checking the length and that every value is finite.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(dim_err!("matrix must be non-empty, got {rows}x{cols}"));
        }
        if rows.checked_mul(cols) != Some(data.len()) {
            return Err(dim_err!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows.saturating_mul(cols),
                data.len()
            ));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self { rows, cols, data })
    }

    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from a generator over `(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Matrix of i.i.d. standard normal entries.
    pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = rng::seeded(seed);
        Self::from_fn(rows, cols, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
    }

    /// Number of rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of columns.
    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row-major values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Consumes the matrix and returns its row-major values.
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Value at `(r, c)`.
    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    /// One row as a slice.
    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Frobenius norm of `self - other`, accumulated in `f64`.
    pub fn frobenius_distance(&self, other: &WeightMatrix) -> Result<f64> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(dim_err!(
                "{}x{} vs {}x{}",
                self.rows,
                self.cols,
                other.rows,
                other.cols
            ));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum();
        Ok(libm::sqrt(sum))
    }
}

/// Calibration data for one layer: the activations `X` (`N x O`, optional) and
/// the Gram matrix `XXᵀ` (`N x N`, always present, kept in `f64`).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSet {
    activations: Option<WeightMatrix>,
    dim: usize,
    gram: Vec<f64>,
}

impl CalibrationSet {
    /// Computes the Gram matrix from activations.
    pub fn from_activations(x: WeightMatrix) -> Self {
        let gram = gram_of(&x);
        Self { dim: x.rows(), activations: Some(x), gram }
    }

    /// Wraps a precomputed Gram matrix. It must be square, finite, symmetric
    /// (up to a relative `1e-6`) and have a non-negative diagonal.
    pub fn from_gram(dim: usize, gram: Vec<f64>) -> Result<Self> {
        check_gram(dim, &gram)?;
        Ok(Self { activations: None, dim, gram: symmetrized(dim, gram) })
    }

    /// Stores both activations and Gram, checking they agree within relative `1e-5`.
    pub fn new(x: WeightMatrix, gram: Vec<f64>) -> Result<Self> {
        let dim = x.rows();
        check_gram(dim, &gram)?;
        let expected = gram_of(&x);
        let scale = expected.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        for (a, b) in expected.iter().zip(&gram) {
            if (a - b).abs() > 1e-5 * scale {
                return Err(dim_err!("stored gram does not match X·Xᵀ"));
            }
        }
        Ok(Self { activations: Some(x), dim, gram: symmetrized(dim, gram) })
    }

    /// Gaussian activations with `samples` columns, reproducible from `seed`.
    pub fn synthetic(dim: usize, samples: usize, seed: u64) -> Self {
        Self::from_activations(WeightMatrix::gaussian(
            dim,
            samples,
            rng::derive_seed(seed, rng::stream::CALIBRATION),
        ))
    }

    /// Identity Gram (`X = I`); the proxy loss becomes the squared Frobenius error.
    pub fn identity(dim: usize) -> Self {
        let mut gram = vec![0.0; dim * dim];
        for i in 0..dim {
            gram[i * dim + i] = 1.0;
        }
        Self { activations: None, dim, gram }
    }

    /// Number of input channels `N`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Row-major `N x N` Gram matrix.
    pub fn gram(&self) -> &[f64] {
        &self.gram
    }

    /// The activations, when they were supplied.
    pub fn activations(&self) -> Option<&WeightMatrix> {
        self.activations.as_ref()
    }

    /// Sum of the Gram diagonal, `||X||_F²`.
    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.gram[i * self.dim + i]).sum()
    }

    /// Every Gram entry scaled by `factor` (activations scaled by `sqrt(factor)`).
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            activations: self.activations.as_ref().map(|x| {
                let s = libm::sqrt(factor) as f32;
                WeightMatrix::from_fn(x.rows(), x.cols(), |r, c| x.get(r, c) * s)
            }),
            dim: self.dim,
            gram: self.gram.iter().map(|v| v * factor).collect(),
        }
    }

    /// Attempts a Cholesky factorization of `gram + ridge·I`; succeeds iff the
    /// regularized Gram is positive definite.
    pub fn is_positive_semidefinite(&self, ridge: f64) -> bool {
        let mut g = self.gram.clone();
        for i in 0..self.dim {
            g[i * self.dim + i] += ridge;
        }
        crate::linalg::cholesky_in_place(&mut g, self.dim).is_ok()
    }
}

fn gram_of(x: &WeightMatrix) -> Vec<f64> {
    let n = x.rows();
    let xs = x.to_f64();
    let o = x.cols();
    let mut gram = vec![0.0; n * n];
    for i in 0..n {
        let xi = &xs[i * o..(i + 1) * o];
        for j in i..n {
            let xj = &xs[j * o..(j + 1) * o];
            let v = dot(xi, xj);
            gram[i * n + j] = v;
            gram[j * n + i] = v;
        }
    }
    gram
}

/// Replaces each off-diagonal pair by its mean, so later code may read
/// columns as rows.
fn symmetrized(dim: usize, mut gram: Vec<f64>) -> Vec<f64> {
    for i in 0..dim {
        for j in i + 1..dim {
            let v = 0.5 * (gram[i * dim + j] + gram[j * dim + i]);
            gram[i * dim + j] = v;
            gram[j * dim + i] = v;
        }
    }
    gram
}

fn check_gram(dim: usize, gram: &[f64]) -> Result<()> {
    if dim == 0 || gram.len() != dim * dim {
        return Err(dim_err!("gram must be {dim}x{dim}, got {} values", gram.len()));
    }
    if let Some(i) = gram.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(i));
    }
    let scale = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..dim {
        if gram[i * dim + i] < 0.0 {
            return Err(dim_err!("gram diagonal entry {i} is negative"));
        }
        for j in i + 1..dim {
            if (gram[i * dim + j] - gram[j * dim + i]).abs() > 1e-6 * scale {
                return Err(dim_err!("gram is not symmetric at ({i}, {j})"));
            }
        }
    }
    Ok(())
}
