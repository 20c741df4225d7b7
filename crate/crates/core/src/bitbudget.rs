//! Closed-form storage accounting in bits per weight.
//!
//! For an `M x N` matrix with `m` codebooks of `2^e` entries of dimension `d`:
//!
//! * codes: `e/d` per weight for the basic codebook, plus `(m-1)·λ'·e/d` for the
//!   extended ones, where `λ'` is the important-column fraction after rounding
//!   up to whole vectors;
//! * codebooks: `2^e·m·d·b_c / (M·N)` with `b_c` bits per stored value;
//! * permutation: `N·b_p / (M·N) = b_p / M` with `b_p` bits per column index.
//!
//! At `M = N = 4096` and 16-bit values the plain VQ figure reduces to
//! `m·e/d + 2^(e-20)·m·d`.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::importance::important_columns;

/// Bit widths used when counting stored codebook values and column indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StorageWidths {
    /// Bits per codebook value.
    pub codebook_value_bits: u32,
    /// Bits per stored column index.
    pub permutation_index_bits: u32,
}

impl StorageWidths {
    /// Half-precision codebooks and 16-bit indices, the conventional accounting.
    pub const COMPACT: Self = Self { codebook_value_bits: 16, permutation_index_bits: 16 };
    /// What the packed file format actually stores: `f32` values and `u32` indices.
    pub const ON_DISK: Self = Self { codebook_value_bits: 32, permutation_index_bits: 32 };
}

impl Default for StorageWidths {
    fn default() -> Self {
        Self::COMPACT
    }
}

/// Inputs of a bit-width computation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitParams {
    /// Matrix rows `M`.
    pub rows: usize,
    /// Matrix columns `N`.
    pub cols: usize,
    /// Codebook count `m`.
    pub codebooks: usize,
    /// Vector dimension `d`.
    pub dim: usize,
    /// Code width `e`.
    pub code_bits: u32,
    /// Important-channel ratio `λ` as requested (before rounding).
    pub ratio: f64,
}

/// Average bits per weight and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BitReport {
    /// `code_bits + codebook_bits + permutation_bits`.
    pub avg_bits: f64,
    /// Code storage per weight.
    pub code_bits: f64,
    /// Codebook storage per weight.
    pub codebook_bits: f64,
    /// Column-permutation storage per weight.
    pub permutation_bits: f64,
    /// What was computed.
    pub params: BitParams,
    /// Widths the storage was counted with.
    pub widths: StorageWidths,
}

impl BitReport {
    /// Header line of [`BitReport::csv_row`].
    pub const CSV_HEADER: &'static str =
        "m,d,e,lambda,avg_bits,code_bits,codebook_bits,permutation_bits";

    fn assemble(params: BitParams, widths: StorageWidths, code_bits: f64, with_perm: bool) -> Self {
        let weights = params.rows as f64 * params.cols as f64;
        let codebook_bits = (1u64 << params.code_bits) as f64
            * params.codebooks as f64
            * params.dim as f64
            * widths.codebook_value_bits as f64
            / weights;
        let permutation_bits = if with_perm {
            params.cols as f64 * widths.permutation_index_bits as f64 / weights
        } else {
            0.0
        };
        Self {
            avg_bits: code_bits + codebook_bits + permutation_bits,
            code_bits,
            codebook_bits,
            permutation_bits,
            params,
            widths,
        }
    }

    /// One CSV line matching [`BitReport::CSV_HEADER`].
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.params.codebooks,
            self.params.dim,
            self.params.code_bits,
            self.params.ratio,
            self.avg_bits,
            self.code_bits,
            self.codebook_bits,
            self.permutation_bits
        )
    }
}

/// Plain multi-codebook VQ: every codebook codes every vector, no permutation.
pub fn avg_bits_vq(rows: usize, cols: usize, codebooks: usize, dim: usize, code_bits: u32) -> BitReport {
    avg_bits_vq_with(rows, cols, codebooks, dim, code_bits, StorageWidths::COMPACT)
}

/// [`avg_bits_vq`] with explicit storage widths.
pub fn avg_bits_vq_with(
    rows: usize,
    cols: usize,
    codebooks: usize,
    dim: usize,
    code_bits: u32,
    widths: StorageWidths,
) -> BitReport {
    let params = BitParams { rows, cols, codebooks, dim, code_bits, ratio: 0.0 };
    let code = codebooks as f64 * code_bits as f64 / dim as f64;
    BitReport::assemble(params, widths, code, false)
}

/// How the important-channel ratio enters the code term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RatioRounding {
    /// Round the important region up to whole vectors, as the quantizer does.
    #[default]
    WholeVectors,
    /// Use `λ` as given.
    Nominal,
}

/// Channel-relaxed VQ: the basic codebook codes every vector, the `m - 1`
/// extended ones only the important region; the column permutation is stored.
pub fn avg_bits_crvq(
    rows: usize,
    cols: usize,
    codebooks: usize,
    dim: usize,
    code_bits: u32,
    ratio: f64,
) -> BitReport {
    avg_bits_crvq_with(
        rows,
        cols,
        codebooks,
        dim,
        code_bits,
        ratio,
        StorageWidths::COMPACT,
        RatioRounding::WholeVectors,
    )
}

/// [`avg_bits_crvq`] with explicit storage widths and ratio handling.
#[allow(clippy::too_many_arguments)]
pub fn avg_bits_crvq_with(
    rows: usize,
    cols: usize,
    codebooks: usize,
    dim: usize,
    code_bits: u32,
    ratio: f64,
    widths: StorageWidths,
    rounding: RatioRounding,
) -> BitReport {
    let params = BitParams { rows, cols, codebooks, dim, code_bits, ratio };
    let effective = match rounding {
        RatioRounding::WholeVectors => important_columns(cols, ratio, dim) as f64 / cols as f64,
        RatioRounding::Nominal => ratio,
    };
    let per_codebook = code_bits as f64 / dim as f64;
    let code = per_codebook + (codebooks as f64 - 1.0) * effective * per_codebook;
    BitReport::assemble(params, widths, code, true)
}

/// Channel-relaxed reports over the grid `dims x bits x ratios`, in that nesting order.
pub fn sweep(
    rows: usize,
    cols: usize,
    codebooks: usize,
    dims: &[usize],
    bits: &[u32],
    ratios: &[f64],
) -> Vec<BitReport> {
    let mut out = Vec::with_capacity(dims.len() * bits.len() * ratios.len());
    for &d in dims {
        for &e in bits {
            for &r in ratios {
                out.push(avg_bits_crvq(rows, cols, codebooks, d, e, r));
            }
        }
    }
    out
}

/// Plain VQ reports over `dims x bits`.
pub fn sweep_vq(rows: usize, cols: usize, codebooks: usize, dims: &[usize], bits: &[u32]) -> Vec<BitReport> {
    let mut out = Vec::with_capacity(dims.len() * bits.len());
    for &d in dims {
        for &e in bits {
            out.push(avg_bits_vq(rows, cols, codebooks, d, e));
        }
    }
    out
}
