//! Channel importance scores and the column permutation that gathers the
//! important channels at the front of the matrix.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::config::{ImportanceForm, ReorderScope};
use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::matrix::{CalibrationSet, WeightMatrix};
use crate::rng;

/// One score per input channel (column); larger means more important.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceVector {
    scores: Vec<f64>,
}

impl ImportanceVector {
    /// Wraps raw scores, which must be finite.
    pub fn new(scores: Vec<f64>) -> Result<Self> {
        if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self { scores })
    }

    /// The scores.
    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Number of channels.
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    /// True if there are no channels.
    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Weight-activation importance: `I_i = max_j ½·Δw_ji²·s_i`, where
/// `Δw = W - W_prequant` and `s_i` is `[XXᵀ]_ii` for [`ImportanceForm::Direct`]
/// or `1 / [(XXᵀ + ρI)⁻¹]_ii` for [`ImportanceForm::InverseHessian`], with
/// `ρ = 1e-6 · mean(diag XXᵀ)`.
///
/// The inverse form fails with [`Error::SingularGram`] when the regularized
/// Gram still cannot be factored; callers fall back to the direct form.
pub fn importance_wa(
    w: &WeightMatrix,
    prequant: &WeightMatrix,
    calib: &CalibrationSet,
    form: ImportanceForm,
) -> Result<ImportanceVector> {
    let n = w.cols();
    if prequant.rows() != w.rows() || prequant.cols() != n || calib.dim() != n {
        return Err(dim_err!(
            "weights {}x{n}, prequantized {}x{}, gram {}x{}",
            w.rows(),
            prequant.rows(),
            prequant.cols(),
            calib.dim(),
            calib.dim()
        ));
    }
    let gram = calib.gram();
    let weight: Vec<f64> = match form {
        ImportanceForm::Direct => (0..n).map(|i| gram[i * n + i]).collect(),
        ImportanceForm::InverseHessian => {
            let ridge = 1e-6 * calib.trace() / n as f64;
            let mut g = gram.to_vec();
            for i in 0..n {
                g[i * n + i] += ridge;
            }
            linalg::spd_inverse_diagonal(&g, n)?.iter().map(|d| 1.0 / d).collect()
        }
    };
    let mut scores = vec![0.0f64; n];
    for r in 0..w.rows() {
        for ((s, (&a, &b)), &h) in scores.iter_mut().zip(w.row(r).iter().zip(prequant.row(r))).zip(&weight) {
            let dw = a as f64 - b as f64;
            *s = s.max(0.5 * dw * dw * h);
        }
    }
    ImportanceVector::new(scores)
}

/// Weight-only importance: `I_i = max_j w_ji²`.
pub fn importance_wonly(w: &WeightMatrix) -> ImportanceVector {
    let mut scores = vec![0.0f64; w.cols()];
    for r in 0..w.rows() {
        for (s, &v) in scores.iter_mut().zip(w.row(r)) {
            *s = s.max(v as f64 * v as f64);
        }
    }
    ImportanceVector { scores }
}

/// A seeded random ranking: the scores are a shuffle of `0..n`.
pub fn importance_random(n: usize, seed: u64) -> ImportanceVector {
    let mut scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
    scores.shuffle(&mut rng::seeded(seed));
    ImportanceVector { scores }
}

/// Width of the important region: `ceil(λ·N/d)·d` columns, capped at `N`.
pub fn important_columns(cols: usize, ratio: f64, dim: usize) -> usize {
    let groups = ratio * cols as f64 / dim as f64;
    // Absorb representation error so that e.g. λ·N/d = 1.0000000000000002 is one group.
    let groups = libm::ceil(groups - 1e-9).max(0.0) as usize;
    (groups * dim).min(cols)
}

/// Which way to apply a [`ChannelPermutation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Original order to reordered order.
    Forward,
    /// Reordered order back to the original.
    Inverse,
}

/// A bijection on column indices. `forward[p]` is the original index of the
/// column placed at position `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelPermutation {
    forward: Vec<usize>,
    inverse: Vec<usize>,
}

impl ChannelPermutation {
    /// Validates `forward` as a bijection on `0..forward.len()`.
    pub fn from_forward(forward: Vec<usize>) -> Result<Self> {
        let n = forward.len();
        let mut inverse = vec![usize::MAX; n];
        for (p, &orig) in forward.iter().enumerate() {
            if orig >= n || inverse[orig] != usize::MAX {
                return Err(Error::CorruptCodeStream(alloc::format!(
                    "column index {orig} at position {p} breaks the permutation"
                )));
            }
            inverse[orig] = p;
        }
        Ok(Self { forward, inverse })
    }

    /// Identity on `n` columns.
    pub fn identity(n: usize) -> Self {
        let forward: Vec<usize> = (0..n).collect();
        Self { inverse: forward.clone(), forward }
    }

    /// New position to original index.
    pub fn forward(&self) -> &[usize] {
        &self.forward
    }

    /// Original index to new position.
    pub fn inverse(&self) -> &[usize] {
        &self.inverse
    }

    /// Number of columns.
    pub fn len(&self) -> usize {
        self.forward.len()
    }

    /// True for the empty permutation.
    pub fn is_empty(&self) -> bool {
        self.forward.is_empty()
    }

    fn source_of(&self, direction: Direction) -> &[usize] {
        match direction {
            Direction::Forward => &self.forward,
            Direction::Inverse => &self.inverse,
        }
    }

    /// Permutes the columns of a flat row-major matrix.
    pub fn apply_columns<T: Copy>(&self, data: &[T], rows: usize, direction: Direction) -> Vec<T> {
        let n = self.len();
        let src = self.source_of(direction);
        let mut out = Vec::with_capacity(data.len());
        for r in 0..rows {
            let row = &data[r * n..(r + 1) * n];
            out.extend(src.iter().map(|&c| row[c]));
        }
        out
    }

    /// Permutes rows and columns of a square `n x n` matrix (a Gram).
    pub fn apply_symmetric(&self, gram: &[f64], direction: Direction) -> Vec<f64> {
        let n = self.len();
        let src = self.source_of(direction);
        let mut out = Vec::with_capacity(n * n);
        for &i in src {
            out.extend(src.iter().map(|&j| gram[i * n + j]));
        }
        out
    }
}

/// Sorts channels by descending score (stable on the original index) and
/// returns the permutation together with the width of the important region.
pub fn build_permutation(
    scores: &ImportanceVector,
    ratio: f64,
    dim: usize,
) -> Result<(ChannelPermutation, usize)> {
    let n = scores.len();
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::InvalidConfig(alloc::format!("lambda {ratio} outside [0, 1]")));
    }
    if dim == 0 || n % dim != 0 {
        return Err(dim_err!("N not divisible by d: N={n}, d={dim}"));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores.scores[b].total_cmp(&scores.scores[a]));
    let perm = ChannelPermutation::from_forward(order)?;
    Ok((perm, important_columns(n, ratio, dim)))
}

/// [`build_permutation`] restricted by `scope`. With
/// [`ReorderScope::ImportantFirst`] the columns after the important region
/// stay in ascending original order.
pub fn build_permutation_scoped(
    scores: &ImportanceVector,
    ratio: f64,
    dim: usize,
    scope: ReorderScope,
) -> Result<(ChannelPermutation, usize)> {
    let (perm, k) = build_permutation(scores, ratio, dim)?;
    match scope {
        ReorderScope::All => Ok((perm, k)),
        ReorderScope::ImportantFirst => {
            let mut forward = perm.forward().to_vec();
            forward[k..].sort_unstable();
            Ok((ChannelPermutation::from_forward(forward)?, k))
        }
    }
}

/// Column `p` of the output is column `forward[p]` of `w` (or the reverse).
pub fn apply_permutation(
    w: &WeightMatrix,
    perm: &ChannelPermutation,
    direction: Direction,
) -> Result<WeightMatrix> {
    if perm.len() != w.cols() {
        return Err(dim_err!("permutation of {} columns applied to {} columns", perm.len(), w.cols()));
    }
    WeightMatrix::new(w.rows(), w.cols(), perm.apply_columns(w.data(), w.rows(), direction))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: usize, cols: usize, v: &[f32]) -> WeightMatrix {
        WeightMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn wa_zero_error_gives_zero_scores() {
        let w = WeightMatrix::gaussian(4, 8, 1);
        let c = CalibrationSet::synthetic(8, 16, 1);
        let s = importance_wa(&w, &w, &c, ImportanceForm::Direct).unwrap();
        assert!(s.scores().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wa_hand_example() {
        let w = m(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let x = m(2, 1, &[1.0, 1.0]);
        let c = CalibrationSet::from_activations(x);
        let s = importance_wa(&w, &WeightMatrix::zeros(2, 2), &c, ImportanceForm::Direct).unwrap();
        assert_eq!(s.scores(), &[0.5, 2.0]);
        let (perm, _) = build_permutation(&s, 0.0, 1).unwrap();
        assert_eq!(perm.forward(), &[1, 0]);
        // Rank-one gram: the inverse form needs the ridge but still ranks.
        let inv = importance_wa(&w, &WeightMatrix::zeros(2, 2), &c, ImportanceForm::InverseHessian)
            .unwrap();
        assert!(inv.scores()[1] > inv.scores()[0]);
    }

    #[test]
    fn wa_scales_quadratically_with_activations() {
        let w = WeightMatrix::gaussian(8, 16, 2);
        let pre = WeightMatrix::gaussian(8, 16, 3);
        let c = CalibrationSet::synthetic(16, 8, 4);
        let a = importance_wa(&w, &pre, &c, ImportanceForm::Direct).unwrap();
        let b = importance_wa(&w, &pre, &c.scaled(9.0), ImportanceForm::Direct).unwrap();
        for (x, y) in a.scores().iter().zip(b.scores()) {
            assert!((y - 9.0 * x).abs() <= 1e-12 * y.abs().max(1.0));
        }
        let pa = build_permutation(&a, 0.5, 8).unwrap();
        let pb = build_permutation(&b, 0.5, 8).unwrap();
        assert_eq!(pa, pb);
    }

    #[test]
    fn inverse_form_singular_gram() {
        let w = WeightMatrix::gaussian(2, 2, 0);
        let c = CalibrationSet::from_gram(2, vec![0.0; 4]).unwrap();
        assert_eq!(
            importance_wa(&w, &w, &c, ImportanceForm::InverseHessian),
            Err(Error::SingularGram)
        );
    }

    #[test]
    fn wonly_examples() {
        assert_eq!(importance_wonly(&m(1, 2, &[3.0, -4.0])).scores(), &[9.0, 16.0]);
        assert_eq!(importance_wonly(&WeightMatrix::zeros(3, 2)).scores(), &[0.0, 0.0]);
        let w = WeightMatrix::gaussian(4, 4, 9);
        let neg = WeightMatrix::from_fn(4, 4, |r, c| -w.get(r, c));
        assert_eq!(importance_wonly(&w), importance_wonly(&neg));
    }

    #[test]
    fn important_first_keeps_the_tail_in_place() {
        let s = ImportanceVector::new(vec![0.1, 5.0, 0.3, 0.2, 9.0, 0.0, 0.4, 0.5]).unwrap();
        let (all, k) = build_permutation(&s, 0.25, 2).unwrap();
        assert_eq!((all.forward(), k), (&[4, 1, 7, 6, 2, 3, 0, 5][..], 2));
        let (first, k) = build_permutation_scoped(&s, 0.25, 2, ReorderScope::ImportantFirst).unwrap();
        assert_eq!((first.forward(), k), (&[4, 1, 0, 2, 3, 5, 6, 7][..], 2));
        let (none, _) = build_permutation_scoped(&s, 0.0, 2, ReorderScope::ImportantFirst).unwrap();
        assert_eq!(none, ChannelPermutation::identity(8));
    }

    #[test]
    fn random_ranking() {
        assert_eq!(importance_random(32, 5), importance_random(32, 5));
        let one = importance_random(1, 5);
        assert_eq!(one.scores(), &[0.0]);
        assert_eq!(build_permutation(&one, 1.0, 1).unwrap().0, ChannelPermutation::identity(1));
        // Distinct orderings across seeds.
        let orders: Vec<ChannelPermutation> =
            (0..100).map(|s| build_permutation(&importance_random(16, s), 0.0, 8).unwrap().0).collect();
        for i in 0..orders.len() {
            for j in i + 1..orders.len() {
                assert_ne!(orders[i], orders[j]);
            }
        }
    }

    #[test]
    fn equal_scores_keep_identity() {
        let s = ImportanceVector::new(vec![1.0; 8]).unwrap();
        assert_eq!(build_permutation(&s, 0.5, 4).unwrap().0, ChannelPermutation::identity(8));
    }

    #[test]
    fn important_width_rounds_up() {
        let s = ImportanceVector::new(vec![0.0; 16]).unwrap();
        assert_eq!(build_permutation(&s, 0.02, 8).unwrap().1, 8);
        assert_eq!(important_columns(4096, 0.02, 8), 88);
        assert_eq!(important_columns(80, 0.1, 8), 8);
        assert_eq!(important_columns(128, 0.0, 8), 0);
        assert_eq!(important_columns(128, 1.0, 8), 128);
    }

    #[test]
    fn forward_example() {
        let w = m(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let p = ChannelPermutation::from_forward(vec![2, 0, 3, 1]).unwrap();
        let f = apply_permutation(&w, &p, Direction::Forward).unwrap();
        assert_eq!(f.data(), &[3.0, 1.0, 4.0, 2.0]);
        assert_eq!(apply_permutation(&f, &p, Direction::Inverse).unwrap(), w);
        assert_eq!(
            apply_permutation(&w, &ChannelPermutation::identity(4), Direction::Forward).unwrap(),
            w
        );
        assert!(ChannelPermutation::from_forward(vec![0, 0]).is_err());
    }

    #[test]
    fn symmetric_permutation_matches_column_permutation() {
        let c = CalibrationSet::synthetic(6, 4, 1);
        let x = c.activations().unwrap();
        let p = ChannelPermutation::from_forward(vec![3, 5, 0, 1, 4, 2]).unwrap();
        // Permuting the channels of X (its rows) gives the symmetrically permuted Gram.
        let px = WeightMatrix::from_fn(6, 4, |r, col| x.get(p.forward()[r], col));
        let expected = CalibrationSet::from_activations(px);
        assert_eq!(p.apply_symmetric(c.gram(), Direction::Forward), expected.gram());
    }

    proptest! {
        #[test]
        fn permutation_round_trip(
            seed in any::<u64>(),
            rows in 1usize..6,
            groups in 1usize..6,
            ratio in 0.0f64..=1.0,
        ) {
            let cols = groups * 4;
            let w = WeightMatrix::gaussian(rows, cols, seed);
            let scores = importance_random(cols, seed ^ 1);
            let (p, k) = build_permutation(&scores, ratio, 4).unwrap();
            prop_assert_eq!(k % 4, 0);
            prop_assert!(ratio == 0.0 || k > 0);
            let f = apply_permutation(&w, &p, Direction::Forward).unwrap();
            prop_assert_eq!(apply_permutation(&f, &p, Direction::Inverse).unwrap(), w);
            let sorted: Vec<f64> = p.forward().iter().map(|&i| scores.scores()[i]).collect();
            prop_assert!(sorted.windows(2).all(|s| s[0] >= s[1]));
        }
    }
}
