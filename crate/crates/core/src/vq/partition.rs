use alloc::vec::Vec;
use core::ops::Range;

use super::VectorSet;
use crate::error::{dim_err, Result};
use crate::matrix::WeightMatrix;

/// Splits every row of `w` into consecutive `dim`-wide vectors, row-major.
pub fn partition(w: &WeightMatrix, dim: usize) -> Result<VectorSet> {
    partition_columns(&w.to_f64(), w.rows(), w.cols(), dim, 0..w.cols())
}

/// Like [`partition`] over a flat row-major `f64` matrix, restricted to the
/// columns in `range` (which must start and end on multiples of `dim`).
pub fn partition_columns(
    data: &[f64],
    rows: usize,
    cols: usize,
    dim: usize,
    range: Range<usize>,
) -> Result<VectorSet> {
    if dim == 0 || cols % dim != 0 {
        return Err(dim_err!("N not divisible by d: N={cols}, d={dim}"));
    }
    if data.len() != rows * cols {
        return Err(dim_err!("{} values for a {rows}x{cols} matrix", data.len()));
    }
    if range.start % dim != 0 || range.end % dim != 0 || range.end > cols || range.start > range.end
    {
        return Err(dim_err!("column range {range:?} does not align to d={dim} within {cols}"));
    }
    let width = range.end - range.start;
    let mut values = Vec::with_capacity(rows * width);
    let mut origins = Vec::with_capacity(rows * width / dim);
    for r in 0..rows {
        values.extend_from_slice(&data[r * cols + range.start..r * cols + range.end]);
        origins.extend((range.start..range.end).step_by(dim).map(|c| (r, c)));
    }
    VectorSet::new(dim, values, origins)
}

/// Writes vectors back to their origins in a `rows x cols` matrix; positions
/// not covered by any vector are zero.
pub fn reassemble(set: &VectorSet, rows: usize, cols: usize) -> Result<Vec<f64>> {
    let dim = set.dim();
    let mut out = alloc::vec![0.0; rows * cols];
    for (v, &(r, c)) in set.iter().zip(set.origins()) {
        if r >= rows || c + dim > cols {
            return Err(dim_err!("vector origin ({r}, {c}) outside {rows}x{cols}"));
        }
        out[r * cols + c..r * cols + c + dim].copy_from_slice(v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn m(rows: usize, cols: usize, v: &[f32]) -> WeightMatrix {
        WeightMatrix::new(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn splits_rows_into_segments() {
        let w = m(2, 4, &[0., 1., 2., 3., 10., 11., 12., 13.]);
        let s = partition(&w, 2).unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.vector(0), &[0., 1.]);
        assert_eq!(s.vector(1), &[2., 3.]);
        assert_eq!(s.vector(2), &[10., 11.]);
        assert_eq!(s.vector(3), &[12., 13.]);
        assert_eq!(s.origins(), &[(0, 0), (0, 2), (1, 0), (1, 2)]);
    }

    #[test]
    fn full_row_vectors() {
        let w = m(3, 4, &[1.0; 12]);
        let s = partition(&w, 4).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|v| v.len() == 4));
    }

    #[test]
    fn rejects_indivisible_width() {
        let w = m(1, 4, &[0.0; 4]);
        assert!(matches!(partition(&w, 3), Err(Error::DimMismatch(_))));
    }

    #[test]
    fn round_trips_random_matrix() {
        let w = WeightMatrix::gaussian(8, 16, 11);
        let s = partition(&w, 8).unwrap();
        assert_eq!(reassemble(&s, 8, 16).unwrap(), w.to_f64());
    }

    #[test]
    fn column_range_partition() {
        let w = m(2, 4, &[0., 1., 2., 3., 10., 11., 12., 13.]);
        let s = partition_columns(&w.to_f64(), 2, 4, 2, 2..4).unwrap();
        assert_eq!(s.data(), &[2., 3., 12., 13.]);
        assert_eq!(s.origins(), &[(0, 2), (1, 2)]);
        assert!(partition_columns(&w.to_f64(), 2, 4, 2, 1..3).is_err());
    }
}
