use alloc::vec;
use alloc::vec::Vec;

use super::{CodeMatrix, Codebook, VectorSet};
use crate::error::{dim_err, Error, Result};
use crate::linalg::dot;

/// Full sweeps over the codebooks before a vector's search gives up.
pub const MAX_BEAM_PASSES: usize = 8;

/// Per-vector objective over the additive reconstruction `y`; lower is better.
trait Objective {
    fn score(&self, y: &[f64]) -> f64;
}

/// `||w - y||²`, computed directly so that ties match [`super::encode`].
struct Euclidean<'a> {
    target: &'a [f64],
}

impl Objective for Euclidean<'_> {
    #[inline]
    fn score(&self, y: &[f64]) -> f64 {
        self.target.iter().zip(y).map(|(w, v)| (w - v) * (w - v)).sum()
    }
}

/// `yᵀHy - 2yᵀb`: the change in a row's proxy loss when one vector's
/// reconstruction moves, up to a constant.
struct Quadratic<'a> {
    h: &'a [f64],
    b: &'a [f64],
}

impl Objective for Quadratic<'_> {
    #[inline]
    fn score(&self, y: &[f64]) -> f64 {
        let d = y.len();
        let mut s = 0.0;
        for i in 0..d {
            s += y[i] * (dot(&self.h[i * d..(i + 1) * d], y) - 2.0 * self.b[i]);
        }
        s
    }
}

fn assemble(codebooks: &[&Codebook], codes: &[u16], y: &mut [f64]) {
    y.iter_mut().for_each(|v| *v = 0.0);
    for (cb, &q) in codebooks.iter().zip(codes) {
        for (o, &c) in y.iter_mut().zip(cb.entry(q as usize)) {
            *o += c as f64;
        }
    }
}

/// Beam search over the code tuple of one vector, starting from `current`.
///
/// Each sweep visits the codebooks in order; for every tuple in the beam all
/// `2^e` replacements of that codebook's code are scored and the best `width`
/// distinct tuples survive (ties: lexicographically smallest codes). The
/// current tuple is always a candidate, so the best score never increases.
fn search(
    objective: &impl Objective,
    codebooks: &[&Codebook],
    current: &[u16],
    width: usize,
    max_passes: usize,
) -> Vec<u16> {
    let dim = codebooks[0].dim();
    let mut y = vec![0.0; dim];
    assemble(codebooks, current, &mut y);
    let mut beam: Vec<(f64, Vec<u16>)> = vec![(objective.score(&y), current.to_vec())];
    let mut candidates: Vec<(f64, Vec<u16>)> = Vec::new();

    for _ in 0..max_passes {
        let before = beam[0].1.clone();
        for (t, cb) in codebooks.iter().enumerate() {
            candidates.clear();
            for (_, codes) in &beam {
                let mut trial = codes.clone();
                for j in 0..cb.len() {
                    trial[t] = j as u16;
                    assemble(codebooks, &trial, &mut y);
                    candidates.push((objective.score(&y), trial.clone()));
                }
            }
            candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
            candidates.dedup_by(|a, b| a.1 == b.1);
            candidates.truncate(width);
            core::mem::swap(&mut beam, &mut candidates);
        }
        if beam[0].1 == before {
            break;
        }
    }
    beam.swap_remove(0).1
}

/// Re-selects the codes of each vector jointly across `codebooks` so that
/// `||w - Σ_t c_t[q_t]||` does not increase.
///
/// `codes[t][i]` is the code of vector `i` in codebook `t`. With
/// `beam_width == 1` this is cyclic coordinate descent, repeated until a
/// sweep changes nothing or [`MAX_BEAM_PASSES`] sweeps have run.
pub fn beam_reassign(
    targets: &VectorSet,
    codebooks: &[Codebook],
    codes: &[Vec<u16>],
    beam_width: usize,
) -> Result<Vec<Vec<u16>>> {
    if codebooks.is_empty() || codes.len() != codebooks.len() {
        return Err(dim_err!("{} code streams for {} codebooks", codes.len(), codebooks.len()));
    }
    if beam_width == 0 {
        return Err(Error::InvalidConfig("beam width must be positive".into()));
    }
    for (cb, stream) in codebooks.iter().zip(codes) {
        if cb.dim() != targets.dim() || stream.len() != targets.len() {
            return Err(dim_err!("codebook or code stream does not match the vector set"));
        }
        if stream.iter().any(|&q| q as usize >= cb.len()) {
            return Err(Error::CorruptCodeStream("code out of codebook range".into()));
        }
    }
    let refs: Vec<&Codebook> = codebooks.iter().collect();
    let mut out: Vec<Vec<u16>> = codes.to_vec();
    let mut tuple = vec![0u16; codebooks.len()];
    for (i, w) in targets.iter().enumerate() {
        for (t, stream) in codes.iter().enumerate() {
            tuple[t] = stream[i];
        }
        let best = search(&Euclidean { target: w }, &refs, &tuple, beam_width, MAX_BEAM_PASSES);
        for (t, q) in best.into_iter().enumerate() {
            out[t][i] = q;
        }
    }
    Ok(out)
}

/// Proxy-loss-aware re-selection over a whole layer in reordered column space.
///
/// Rows are independent. Within a row, groups are visited left to right and
/// each vector's codes are searched against the exact change in
/// `Δ_r G Δ_rᵀ` with the other vectors of the row held fixed; the running
/// `G Δ_rᵀ` is updated after every accepted move.
pub(crate) fn reassign_weighted(
    weights: &[f64],
    gram: &[f64],
    codebooks: &[Codebook],
    codes: &mut CodeMatrix,
    beam_width: usize,
) {
    let dim = codebooks[0].dim();
    let cols = codes.groups() * dim;
    let refs: Vec<&Codebook> = codebooks.iter().collect();
    let mut recon = vec![0.0; cols];
    let mut delta = vec![0.0; cols];
    let mut g_delta = vec![0.0; cols];
    let mut h = vec![0.0; dim * dim];
    let mut b = vec![0.0; dim];
    let mut tuple = Vec::with_capacity(codebooks.len());
    let mut y_new = vec![0.0; dim];

    for r in 0..codes.rows() {
        for g in 0..codes.groups() {
            tuple.clear();
            tuple.extend((0..codes.active_codebooks(g)).map(|t| codes.code(t, r, g)));
            assemble(&refs[..tuple.len()], &tuple, &mut recon[g * dim..(g + 1) * dim]);
        }
        let w = &weights[r * cols..(r + 1) * cols];
        for ((d, a), b) in delta.iter_mut().zip(w).zip(&recon) {
            *d = a - b;
        }
        for i in 0..cols {
            g_delta[i] = dot(&gram[i * cols..(i + 1) * cols], &delta);
        }

        for g in 0..codes.groups() {
            let k = codes.active_codebooks(g);
            let j0 = g * dim;
            for i in 0..dim {
                for j in 0..dim {
                    h[i * dim + j] = gram[(j0 + i) * cols + j0 + j];
                }
            }
            let y_old = &recon[j0..j0 + dim];
            for i in 0..dim {
                let hy: f64 = h[i * dim..(i + 1) * dim].iter().zip(y_old).map(|(a, b)| a * b).sum();
                b[i] = hy + g_delta[j0 + i];
            }
            tuple.clear();
            tuple.extend((0..k).map(|t| codes.code(t, r, g)));
            let best = search(
                &Quadratic { h: &h, b: &b },
                &refs[..k],
                &tuple,
                beam_width,
                MAX_BEAM_PASSES,
            );
            if best == tuple {
                continue;
            }
            for (t, &q) in best.iter().enumerate() {
                codes.set_code(t, r, g, q);
            }
            assemble(&refs[..k], &best, &mut y_new);
            for i in 0..dim {
                let step = y_new[i] - recon[j0 + i];
                recon[j0 + i] = y_new[i];
                delta[j0 + i] -= step;
                if step != 0.0 {
                    let col = j0 + i;
                    // G is symmetric, so its row `col` is also its column.
                    for (gd, &gc) in g_delta.iter_mut().zip(&gram[col * cols..(col + 1) * cols]) {
                        *gd -= gc * step;
                    }
                }
            }
        }
    }
}
