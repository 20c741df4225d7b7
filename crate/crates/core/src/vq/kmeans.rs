use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use super::encode::nearest_in;
use super::{Codebook, VectorSet};
use crate::error::{Error, Result};
use crate::rng;

/// Lloyd iterations after k-means++ seeding.
pub const MAX_LLOYD_ITERS: usize = 100;

/// Lloyd stops once no centroid moves further than this times the data RMS.
const SHIFT_TOLERANCE: f64 = 1e-6;

/// Outcome of a k-means run.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansFit {
    /// The fitted codebook.
    pub codebook: Codebook,
    /// Within-cluster squared error of the nearest assignment to the seeds.
    pub initial_sse: f64,
    /// Within-cluster squared error of the nearest assignment to the final codebook.
    pub final_sse: f64,
    /// Lloyd iterations performed.
    pub iterations: usize,
}

/// Fits a `2^bits`-entry codebook to `set` with seeded k-means++ and Lloyd.
pub fn kmeans_codebook(set: &VectorSet, bits: u32, seed: u64) -> Result<Codebook> {
    kmeans_fit(set, bits, seed, false).map(|f| f.codebook)
}

/// k-means with diagnostics. With `pin_zero`, entry 0 is fixed at the origin
/// for the whole run: it is the first seed and is never moved by Lloyd.
pub fn kmeans_fit(set: &VectorSet, bits: u32, seed: u64, pin_zero: bool) -> Result<KMeansFit> {
    if set.is_empty() {
        return Err(Error::EmptyInput);
    }
    if !(1..=16).contains(&bits) {
        return Err(Error::InvalidConfig(alloc::format!("code bits {bits}")));
    }
    let dim = set.dim();
    let k = 1usize << bits;
    let mut rng = rng::seeded(seed);

    let mut centroids = plus_plus_seeds(set, k, pin_zero, &mut rng);
    let rms = libm::sqrt(set.squared_norm() / set.data().len() as f64);
    let tolerance = SHIFT_TOLERANCE * rms;

    let mut assignment: Vec<(usize, f64)> =
        set.iter().map(|v| nearest_in(v, &centroids, dim)).collect();
    let initial_sse = assignment.iter().map(|a| a.1).sum();

    let first_free = usize::from(pin_zero);
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    let mut iterations = 0;
    while iterations < MAX_LLOYD_ITERS {
        iterations += 1;
        sums.iter_mut().for_each(|s| *s = 0.0);
        counts.iter_mut().for_each(|c| *c = 0);
        for (v, &(c, _)) in set.iter().zip(&assignment) {
            counts[c] += 1;
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(v) {
                *s += x;
            }
        }

        let mut next = centroids.clone();
        for c in first_free..k {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (n, s) in next[c * dim..(c + 1) * dim].iter_mut().zip(&sums[c * dim..]) {
                    *n = s * inv;
                }
            }
        }

        // Empty clusters take the vector currently worst served by its own centroid.
        if counts[first_free..].contains(&0) {
            let mut errors: Vec<f64> = set
                .iter()
                .zip(&assignment)
                .map(|(v, &(c, _))| sq_dist(v, &next[c * dim..(c + 1) * dim]))
                .collect();
            for c in first_free..k {
                if counts[c] != 0 {
                    continue;
                }
                let worst = argmax(&errors);
                next[c * dim..(c + 1) * dim].copy_from_slice(set.vector(worst));
                errors[worst] = 0.0;
            }
        }

        let shift = (0..k)
            .map(|c| sq_dist(&centroids[c * dim..(c + 1) * dim], &next[c * dim..(c + 1) * dim]))
            .fold(0.0f64, f64::max);
        centroids = next;
        for (a, v) in assignment.iter_mut().zip(set.iter()) {
            *a = nearest_in(v, &centroids, dim);
        }
        if libm::sqrt(shift) <= tolerance {
            break;
        }
    }

    let entries: Vec<f32> = centroids.iter().map(|&c| c as f32).collect();
    let codebook = Codebook::new(dim, bits, entries)?;
    let final_sse = set.iter().map(|v| nearest_in(v, codebook.entries(), dim).1).sum();
    Ok(KMeansFit { codebook, initial_sse, final_sse, iterations })
}

/// k-means++ seeding. When fewer than `k` distinct vectors exist, the
/// remaining seeds repeat the chosen ones cyclically.
fn plus_plus_seeds(set: &VectorSet, k: usize, pin_zero: bool, rng: &mut impl Rng) -> Vec<f64> {
    let dim = set.dim();
    let n = set.len();
    let mut centroids = Vec::with_capacity(k * dim);
    if pin_zero {
        centroids.extend(core::iter::repeat_n(0.0, dim));
    } else {
        centroids.extend_from_slice(set.vector(rng.random_range(0..n)));
    }
    let mut weights: Vec<f64> =
        set.iter().map(|v| sq_dist(v, &centroids[..dim])).collect();

    let mut chosen = 1;
    while chosen < k {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut pick = None;
        for (i, &w) in weights.iter().enumerate() {
            if w > 0.0 {
                acc += w;
                pick = Some(i);
                if acc > target {
                    break;
                }
            }
        }
        let pick = pick.expect("positive total implies a positive weight");
        let start = centroids.len();
        centroids.extend_from_slice(set.vector(pick));
        for (w, v) in weights.iter_mut().zip(set.iter()) {
            *w = w.min(sq_dist(v, &centroids[start..start + dim]));
        }
        chosen += 1;
    }
    for i in 0..(k - chosen) * dim {
        let v = centroids[i % (chosen * dim)];
        centroids.push(v);
    }
    centroids
}

#[inline]
fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}
