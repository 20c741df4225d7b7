use alloc::vec::Vec;

use super::{Codebook, VectorSet};
use crate::error::{dim_err, Result};

/// Index and squared distance of the entry of `table` (flat, `dim`-wide)
/// closest to `v`. Ties go to the lowest index.
#[inline]
pub(crate) fn nearest_in<T: Copy + Into<f64>>(v: &[f64], table: &[T], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in table.chunks_exact(dim).enumerate() {
        let mut dist = 0.0;
        for (a, &b) in v.iter().zip(c) {
            let diff = a - b.into();
            dist += diff * diff;
        }
        if dist < best.1 {
            best = (k, dist);
        }
    }
    best
}

/// Closest codebook entry to `v` and its squared L2 distance.
pub fn nearest(v: &[f64], codebook: &Codebook) -> (u16, f64) {
    let (k, d) = nearest_in(v, codebook.entries(), codebook.dim());
    (k as u16, d)
}

/// Replaces every vector with its nearest codebook entry.
///
/// Returns one code per vector and the reconstruction (the looked-up entries).
pub fn encode(set: &VectorSet, codebook: &Codebook) -> Result<(Vec<u16>, VectorSet)> {
    if set.dim() != codebook.dim() {
        return Err(dim_err!(
            "vectors have dimension {}, codebook {}",
            set.dim(),
            codebook.dim()
        ));
    }
    let mut codes = Vec::with_capacity(set.len());
    let mut recon = Vec::with_capacity(set.data().len());
    for v in set.iter() {
        let (q, _) = nearest(v, codebook);
        codes.push(q);
        recon.extend(codebook.entry(q as usize).iter().map(|&c| c as f64));
    }
    let recon = VectorSet::new(set.dim(), recon, set.origins().to_vec())?;
    Ok((codes, recon))
}
