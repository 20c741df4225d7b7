//! Vector quantization primitives: partitioning, k-means codebooks, nearest
//! code encoding, additive residual fitting, beam code re-selection and
//! codebook fine-tuning.

mod beam;
mod encode;
mod finetune;
mod kmeans;
mod partition;
mod residual;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use beam::{beam_reassign, MAX_BEAM_PASSES};
pub(crate) use beam::reassign_weighted;
pub use encode::{encode, nearest};
pub use finetune::{finetune_codebooks, FinetuneOutcome, ProxyProblem};
pub use kmeans::{kmeans_codebook, kmeans_fit, KMeansFit, MAX_LLOYD_ITERS};
pub use partition::{partition, partition_columns, reassemble};
pub use residual::residual_fit;

use crate::error::{Error, Result};

/// A set of `dim`-dimensional vectors cut out of a matrix, with the
/// `(row, start column)` each one came from.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorSet {
    dim: usize,
    data: Vec<f64>,
    origins: Vec<(usize, usize)>,
}

impl VectorSet {
    /// Builds a set from flat values; `origins` must have one entry per vector.
    pub fn new(dim: usize, data: Vec<f64>, origins: Vec<(usize, usize)>) -> Result<Self> {
        if dim == 0 || data.len() != dim * origins.len() {
            return Err(crate::error::dim_err!(
                "{} values do not form {} vectors of dimension {dim}",
                data.len(),
                origins.len()
            ));
        }
        if origins.iter().any(|&(_, c)| c % dim != 0) {
            return Err(crate::error::dim_err!("vector start column not a multiple of {dim}"));
        }
        Ok(Self { dim, data, origins })
    }

    /// Vector dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of vectors.
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    /// True when the set holds no vectors.
    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    /// Vector `i`.
    #[inline]
    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Iterator over all vectors.
    pub fn iter(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// `(row, start column)` of each vector.
    pub fn origins(&self) -> &[(usize, usize)] {
        &self.origins
    }

    /// Flat values.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Element-wise `self - other`, keeping `self`'s origins.
    pub fn difference(&self, other: &VectorSet) -> Result<VectorSet> {
        if self.dim != other.dim || self.len() != other.len() {
            return Err(crate::error::dim_err!(
                "vector sets differ: {}x{} vs {}x{}",
                self.len(),
                self.dim,
                other.len(),
                other.dim
            ));
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Ok(Self { dim: self.dim, data, origins: self.origins.clone() })
    }

    /// Sum of squared values.
    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// `2^bits` centroid vectors of dimension `dim`, stored as 32-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dim: usize,
    bits: u32,
    entries: Vec<f32>,
}

impl Codebook {
    /// Wraps flat entries, checking the count is exactly `2^bits` and values are finite.
    pub fn new(dim: usize, bits: u32, entries: Vec<f32>) -> Result<Self> {
        if dim == 0 || !(1..=16).contains(&bits) {
            return Err(Error::InvalidConfig(format!("codebook dim {dim}, bits {bits}")));
        }
        if entries.len() != (1usize << bits) * dim {
            return Err(crate::error::dim_err!(
                "codebook with {} entries of dimension {dim} needs {} values, got {}",
                1usize << bits,
                (1usize << bits) * dim,
                entries.len()
            ));
        }
        if let Some(i) = entries.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteValue(i));
        }
        Ok(Self { dim, bits, entries })
    }

    /// Codebook with every entry at the origin.
    pub fn zeros(dim: usize, bits: u32) -> Self {
        Self { dim, bits, entries: vec![0.0; (1usize << bits) * dim] }
    }

    /// Entry dimension.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Code width in bits.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of entries, `2^bits`.
    pub fn len(&self) -> usize {
        1 << self.bits
    }

    /// Always false; a codebook has at least two entries.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Entry `k`.
    #[inline]
    pub fn entry(&self, k: usize) -> &[f32] {
        &self.entries[k * self.dim..(k + 1) * self.dim]
    }

    /// Flat entry values.
    pub fn entries(&self) -> &[f32] {
        &self.entries
    }

    /// Entries widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        self.entries.iter().map(|&v| v as f64).collect()
    }
}

/// Codes of a whole layer: codebook 0 covers every vector group of every row,
/// extended codebooks `1..m` cover only the first `important_groups` groups.
///
/// Codes are row-major: index `r * groups + g` for the basic codebook and
/// `r * important_groups + g` for extended ones.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeMatrix {
    rows: usize,
    groups: usize,
    important_groups: usize,
    bits: u32,
    codes: Vec<Vec<u16>>,
}

impl CodeMatrix {
    /// Validates and wraps per-codebook code vectors.
    pub fn new(
        rows: usize,
        groups: usize,
        important_groups: usize,
        bits: u32,
        codes: Vec<Vec<u16>>,
    ) -> Result<Self> {
        let corrupt = |msg| Err(Error::CorruptCodeStream(msg));
        if codes.is_empty() {
            return corrupt(format!("no code streams"));
        }
        if important_groups > groups {
            return corrupt(format!("{important_groups} important groups exceed {groups} groups"));
        }
        for (t, stream) in codes.iter().enumerate() {
            let expected = if t == 0 { rows * groups } else { rows * important_groups };
            if stream.len() != expected {
                return corrupt(format!(
                    "codebook {t} has {} codes, expected {expected}",
                    stream.len()
                ));
            }
            if bits < 16 {
                if let Some(&bad) = stream.iter().find(|&&q| (q as u32) >> bits != 0) {
                    return corrupt(format!("code {bad} does not fit in {bits} bits"));
                }
            }
        }
        Ok(Self { rows, groups, important_groups, bits, codes })
    }

    /// Matrix rows.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Vector groups per row (`N / d`).
    pub fn groups(&self) -> usize {
        self.groups
    }

    /// Groups per row covered by the extended codebooks.
    pub fn important_groups(&self) -> usize {
        self.important_groups
    }

    /// Code width.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Number of codebooks.
    pub fn num_codebooks(&self) -> usize {
        self.codes.len()
    }

    /// Codes of codebook `t`.
    pub fn stream(&self, t: usize) -> &[u16] {
        &self.codes[t]
    }

    /// All streams.
    pub fn streams(&self) -> &[Vec<u16>] {
        &self.codes
    }

    /// Number of codebooks active for group `g`.
    #[inline]
    pub fn active_codebooks(&self, g: usize) -> usize {
        if g < self.important_groups {
            self.codes.len()
        } else {
            1
        }
    }

    /// Code of codebook `t` for row `r`, group `g`. `t > 0` requires an important group.
    #[inline]
    pub fn code(&self, t: usize, r: usize, g: usize) -> u16 {
        if t == 0 {
            self.codes[0][r * self.groups + g]
        } else {
            self.codes[t][r * self.important_groups + g]
        }
    }

    #[inline]
    pub(crate) fn set_code(&mut self, t: usize, r: usize, g: usize, q: u16) {
        if t == 0 {
            self.codes[0][r * self.groups + g] = q;
        } else {
            self.codes[t][r * self.important_groups + g] = q;
        }
    }

    /// Total number of stored codes.
    pub fn total_codes(&self) -> usize {
        self.codes.iter().map(Vec::len).sum()
    }
}

/// Additive reconstruction in the (reordered) column space, summing entries
/// in codebook order `0..m` in `f64`.
///
/// `tables[t]` is codebook `t`'s flat entry table.
pub fn reconstruct(tables: &[Vec<f64>], codes: &CodeMatrix, dim: usize) -> Vec<f64> {
    let cols = codes.groups() * dim;
    let mut out = vec![0.0; codes.rows() * cols];
    for r in 0..codes.rows() {
        for g in 0..codes.groups() {
            let dst = &mut out[r * cols + g * dim..r * cols + (g + 1) * dim];
            for (t, table) in tables.iter().enumerate().take(codes.active_codebooks(g)) {
                let q = codes.code(t, r, g) as usize;
                for (o, c) in dst.iter_mut().zip(&table[q * dim..(q + 1) * dim]) {
                    *o += c;
                }
            }
        }
    }
    out
}
