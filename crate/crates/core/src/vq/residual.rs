use alloc::vec::Vec;

use super::kmeans::kmeans_fit;
use super::{encode, Codebook, VectorSet};
use crate::error::Result;

/// Fits an additional codebook to the residual `target - current` and encodes
/// the residual with it.
///
/// Entry 0 of the returned codebook is pinned at the origin, so each vector's
/// new error is at most its residual norm and the total squared error never
/// grows.
pub fn residual_fit(
    target: &VectorSet,
    current: &VectorSet,
    bits: u32,
    seed: u64,
) -> Result<(Codebook, Vec<u16>)> {
    let residual = target.difference(current)?;
    let codebook = kmeans_fit(&residual, bits, seed, true)?.codebook;
    let (codes, _) = encode(&residual, &codebook)?;
    Ok((codebook, codes))
}
