//! Small dense helpers that `no_std` forces us to write by hand.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// In-place lower Cholesky factorization of a row-major `n x n` SPD matrix.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut diag = a[j * n + j];
        for k in 0..j {
            diag -= a[j * n + k] * a[j * n + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return Err(Error::SingularGram);
        }
        let diag = libm::sqrt(diag);
        a[j * n + j] = diag;
        for i in j + 1..n {
            let mut v = a[i * n + j];
            for k in 0..j {
                v -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = v / diag;
        }
    }
    Ok(())
}

/// `Σ a_i b_i` with four independent accumulators, so the loop vectorizes.
/// The summation order is fixed, so results are reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Diagonal of `a⁻¹` for SPD `a`, via Cholesky: `[a⁻¹]_ii = ||L⁻¹ e_i||²`.
pub(crate) fn spd_inverse_diagonal(a: &[f64], n: usize) -> Result<Vec<f64>> {
    let mut l = a.to_vec();
    cholesky_in_place(&mut l, n)?;
    // Columns of L⁻¹ by forward substitution; [a⁻¹]_ii = sum_k (L⁻¹)_{ki}².
    let mut diag = vec![0.0; n];
    let mut col = vec![0.0; n];
    for i in 0..n {
        col.iter_mut().for_each(|v| *v = 0.0);
        col[i] = 1.0 / l[i * n + i];
        let mut acc = col[i] * col[i];
        for k in i + 1..n {
            let mut v = 0.0;
            for j in i..k {
                v -= l[k * n + j] * col[j];
            }
            col[k] = v / l[k * n + k];
            acc += col[k] * col[k];
        }
        diag[i] = acc;
    }
    Ok(diag)
}
