//! Layer-level quantization: prequantize, rank and reorder channels, fit the
//! basic codebook, fit extended codebooks on the important region, then
//! alternate codebook fine-tuning with code re-selection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::bitbudget::{avg_bits_crvq, avg_bits_crvq_with, RatioRounding, StorageWidths};
use crate::config::{ImportanceForm, ImportanceMetric, QuantConfig};
use crate::error::{dim_err, Error, Result};
use crate::importance::{
    build_permutation_scoped, importance_random, importance_wa, importance_wonly, ChannelPermutation,
    Direction, ImportanceVector,
};
use crate::matrix::{CalibrationSet, WeightMatrix};
use crate::rng::{derive_seed, stream};
use crate::vq::{
    encode, finetune_codebooks, kmeans_codebook, partition, partition_columns, reassign_weighted,
    reconstruct, residual_fit, CodeMatrix, Codebook, ProxyProblem,
};

/// Refinement stops when a round improves the proxy loss by less than this fraction.
pub const MIN_RELATIVE_IMPROVEMENT: f64 = 1e-4;

/// Shape and coding parameters stored with a quantized layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerParams {
    /// Rows `M`.
    pub rows: usize,
    /// Columns `N`.
    pub cols: usize,
    /// Vector dimension `d`.
    pub dim: usize,
    /// Code width `e`.
    pub code_bits: u32,
    /// Codebook count `m`.
    pub num_codebooks: usize,
    /// Width of the important region, a multiple of `dim`.
    pub important_cols: usize,
    /// Seed the layer was produced with.
    pub seed: u64,
}

/// A quantized weight matrix: permutation, codebooks (0 is basic) and codes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizedLayer {
    params: LayerParams,
    perm: ChannelPermutation,
    codebooks: Vec<Codebook>,
    codes: CodeMatrix,
}

impl QuantizedLayer {
    /// Assembles a layer, checking that every part agrees with `params`.
    pub fn new(
        params: LayerParams,
        perm: ChannelPermutation,
        codebooks: Vec<Codebook>,
        codes: CodeMatrix,
    ) -> Result<Self> {
        let p = &params;
        let corrupt = |msg: alloc::string::String| Err(Error::CorruptCodeStream(msg));
        if p.rows == 0 || p.cols == 0 || p.dim == 0 || p.cols % p.dim != 0 {
            return corrupt(format!("bad shape {}x{} with d={}", p.rows, p.cols, p.dim));
        }
        if p.important_cols % p.dim != 0 || p.important_cols > p.cols {
            return corrupt(format!("important width {} invalid", p.important_cols));
        }
        if perm.len() != p.cols {
            return corrupt(format!("permutation has {} columns, expected {}", perm.len(), p.cols));
        }
        if codebooks.len() != p.num_codebooks || p.num_codebooks == 0 {
            return corrupt(format!("{} codebooks, expected {}", codebooks.len(), p.num_codebooks));
        }
        if codebooks.iter().any(|cb| cb.dim() != p.dim || cb.bits() != p.code_bits) {
            return corrupt(format!("codebook shape disagrees with d={}, e={}", p.dim, p.code_bits));
        }
        if codes.rows() != p.rows
            || codes.groups() != p.cols / p.dim
            || codes.important_groups() != p.important_cols / p.dim
            || codes.num_codebooks() != p.num_codebooks
            || codes.bits() != p.code_bits
        {
            return corrupt(format!("code matrix does not match the layer header"));
        }
        Ok(Self { params, perm, codebooks, codes })
    }

    /// Header values.
    pub fn params(&self) -> &LayerParams {
        &self.params
    }

    /// Column permutation (position in reordered space to original column).
    pub fn permutation(&self) -> &ChannelPermutation {
        &self.perm
    }

    /// Codebooks, basic first.
    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    /// Codes.
    pub fn codes(&self) -> &CodeMatrix {
        &self.codes
    }

    /// Reconstruction in reordered column order, in `f64`.
    pub fn reconstruction_reordered(&self) -> Vec<f64> {
        let tables: Vec<Vec<f64>> = self.codebooks.iter().map(Codebook::to_f64).collect();
        reconstruct(&tables, &self.codes, self.params.dim)
    }

    /// `Ŵ` in the original column order.
    pub fn decode(&self) -> WeightMatrix {
        let values: Vec<f32> = self.reconstruction_reordered().iter().map(|&v| v as f32).collect();
        let restored = self.perm.apply_columns(&values, self.params.rows, Direction::Inverse);
        WeightMatrix::new(self.params.rows, self.params.cols, restored)
            .expect("sums of finite f32 entries are finite")
    }
}

/// Decodes a layer back to a dense matrix in the original column order.
pub fn decode_layer(layer: &QuantizedLayer) -> Result<WeightMatrix> {
    Ok(layer.decode())
}

/// A point in the refinement schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Basic codebook over every vector.
    Basic,
    /// After extended codebook `t` (1-based).
    Extended(usize),
    /// After fine-tuning in outer round `i` (1-based).
    Finetune(usize),
    /// After code re-selection in outer round `i` (1-based).
    Beam(usize),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Basic => write!(f, "basic"),
            Stage::Extended(t) => write!(f, "extended{t}"),
            Stage::Finetune(i) => write!(f, "finetune{i}"),
            Stage::Beam(i) => write!(f, "beam{i}"),
        }
    }
}

/// Diagnostics of one [`quantize_layer`] run.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantReport {
    /// Proxy loss after the basic codebook.
    pub proxy_loss_initial: f64,
    /// Proxy loss of the returned layer.
    pub proxy_loss_final: f64,
    /// `||W - Ŵ||_F` of the decoded layer.
    pub frobenius_error: f64,
    /// Bits per weight with 16-bit codebook values and indices.
    pub avg_bits: f64,
    /// Bits per weight of the packed on-disk form (32-bit values and indices, no header).
    pub avg_bits_on_disk: f64,
    /// Fine-tune/re-selection rounds run.
    pub iterations_used: usize,
    /// Proxy loss after every stage, in order.
    pub trace: Vec<(Stage, f64)>,
}

/// Step-by-step driver behind [`quantize_layer`], exposed so callers can
/// inspect intermediate states.
#[derive(Debug, Clone)]
pub struct LayerQuantizer {
    cfg: QuantConfig,
    problem: ProxyProblem,
    perm: ChannelPermutation,
    scores: ImportanceVector,
    important_cols: usize,
    codebooks: Vec<Codebook>,
    codes: Vec<Vec<u16>>,
    recon: Vec<f64>,
    trace: Vec<(Stage, f64)>,
    rounds: usize,
}

impl LayerQuantizer {
    /// Ranks and reorders channels and fits the basic codebook.
    pub fn new(w: &WeightMatrix, calib: &CalibrationSet, cfg: &QuantConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_columns(w.cols())?;
        if calib.dim() != w.cols() {
            return Err(dim_err!(
                "calibration covers {} channels, layer has {}",
                calib.dim(),
                w.cols()
            ));
        }
        if !(calib.trace() > 0.0) {
            return Err(Error::DegenerateCalibration("XXᵀ is the zero matrix".into()));
        }
        let (rows, cols, dim) = (w.rows(), w.cols(), cfg.vector_dim);

        let scores = channel_scores(w, calib, cfg)?;
        let (perm, important_cols) =
            build_permutation_scoped(&scores, cfg.important_ratio, dim, cfg.reorder)?;
        let weights = perm.apply_columns(&w.to_f64(), rows, Direction::Forward);
        let gram = perm.apply_symmetric(calib.gram(), Direction::Forward);
        let problem = ProxyProblem::from_parts(rows, cols, weights, gram)?;

        let vectors = partition_columns(problem.weights(), rows, cols, dim, 0..cols)?;
        let basic = kmeans_codebook(&vectors, cfg.code_bits, derive_seed(cfg.seed, stream::BASIC))?;
        let (basic_codes, recon) = encode(&vectors, &basic)?;
        let recon = recon.data().to_vec();
        let loss = problem.loss_of(&recon);

        Ok(Self {
            cfg: cfg.clone(),
            problem,
            perm,
            scores,
            important_cols,
            codebooks: vec![basic],
            codes: vec![basic_codes],
            recon,
            trace: vec![(Stage::Basic, loss)],
            rounds: 0,
        })
    }

    /// Channel scores the permutation was built from.
    pub fn scores(&self) -> &ImportanceVector {
        &self.scores
    }

    /// Column permutation.
    pub fn permutation(&self) -> &ChannelPermutation {
        &self.perm
    }

    /// Width of the important region.
    pub fn important_cols(&self) -> usize {
        self.important_cols
    }

    /// Reordered weights, row-major `f64`.
    pub fn reordered_weights(&self) -> &[f64] {
        self.problem.weights()
    }

    /// Current reconstruction in reordered order.
    pub fn reconstruction(&self) -> &[f64] {
        &self.recon
    }

    /// Codebooks fitted so far.
    pub fn codebooks(&self) -> &[Codebook] {
        &self.codebooks
    }

    /// Loss trace so far.
    pub fn trace(&self) -> &[(Stage, f64)] {
        &self.trace
    }

    /// Current proxy loss.
    pub fn loss(&self) -> f64 {
        self.trace.last().expect("trace starts at the basic stage").1
    }

    fn code_matrix(&self) -> Result<CodeMatrix> {
        let dim = self.cfg.vector_dim;
        CodeMatrix::new(
            self.problem.rows(),
            self.problem.cols() / dim,
            self.important_cols / dim,
            self.cfg.code_bits,
            self.codes.clone(),
        )
    }

    /// Fits the next extended codebook to the residual of the important region.
    ///
    /// Rows whose proxy loss the new codes would raise are pointed at the
    /// codebook's zero entry instead, so neither the proxy loss nor any row's
    /// squared error grows.
    pub fn add_extended(&mut self) -> Result<()> {
        let t = self.codebooks.len();
        if t >= self.cfg.num_codebooks {
            return Err(Error::InvalidConfig(format!("all {t} codebooks already fitted")));
        }
        let (rows, cols, dim) = (self.problem.rows(), self.problem.cols(), self.cfg.vector_dim);
        let width = self.important_cols;
        if width == 0 {
            self.codebooks.push(Codebook::zeros(dim, self.cfg.code_bits));
            self.codes.push(Vec::new());
            let loss = self.loss();
            self.trace.push((Stage::Extended(t), loss));
            return Ok(());
        }

        let target = partition_columns(self.problem.weights(), rows, cols, dim, 0..width)?;
        let current = partition_columns(&self.recon, rows, cols, dim, 0..width)?;
        let seed = derive_seed(self.cfg.seed, stream::EXTENDED + t as u64);
        let (codebook, mut codes) = residual_fit(&target, &current, self.cfg.code_bits, seed)?;

        let groups = width / dim;
        let mut next = self.recon.clone();
        for r in 0..rows {
            add_row_codes(&mut next[r * cols..], &codebook, &codes[r * groups..(r + 1) * groups]);
            if self.problem.row_loss(r, &next) > self.problem.row_loss(r, &self.recon) {
                codes[r * groups..(r + 1) * groups].iter_mut().for_each(|q| *q = 0);
                next[r * cols..r * cols + width].copy_from_slice(&self.recon[r * cols..r * cols + width]);
            }
        }
        self.recon = next;
        self.codebooks.push(codebook);
        self.codes.push(codes);
        let loss = self.problem.loss_of(&self.recon);
        self.trace.push((Stage::Extended(t), loss));
        Ok(())
    }

    /// One round of codebook fine-tuning followed by code re-selection.
    pub fn refine_round(&mut self) -> Result<()> {
        let dim = self.cfg.vector_dim;
        let round = self.rounds + 1;
        let codes = self.code_matrix()?;
        let tuned = finetune_codebooks(
            &self.problem,
            &self.codebooks,
            &codes,
            self.cfg.epsilon,
            self.cfg.finetune.steps,
            &self.cfg.finetune,
        )?;
        self.codebooks = tuned.codebooks;
        let tables: Vec<Vec<f64>> = self.codebooks.iter().map(Codebook::to_f64).collect();
        self.recon = reconstruct(&tables, &codes, dim);
        self.trace.push((Stage::Finetune(round), self.problem.loss_of(&self.recon)));

        let mut codes = codes;
        reassign_weighted(
            self.problem.weights(),
            self.problem.gram(),
            &self.codebooks,
            &mut codes,
            self.cfg.beam_width,
        );
        self.recon = reconstruct(&tables, &codes, dim);
        self.codes = codes.streams().to_vec();
        self.trace.push((Stage::Beam(round), self.problem.loss_of(&self.recon)));
        self.rounds = round;
        Ok(())
    }

    /// Runs the remaining extended fits and the refinement loop, then
    /// assembles the layer.
    pub fn run(mut self, original: &WeightMatrix) -> Result<(QuantizedLayer, QuantReport)> {
        while self.codebooks.len() < self.cfg.num_codebooks {
            self.add_extended()?;
        }
        while self.rounds < self.cfg.max_outer_iters {
            let before = self.loss();
            if before == 0.0 || before < self.cfg.epsilon {
                break;
            }
            self.refine_round()?;
            if before - self.loss() < MIN_RELATIVE_IMPROVEMENT * before {
                break;
            }
        }
        self.finish(original)
    }

    /// Assembles the layer and its report without further refinement.
    pub fn finish(self, original: &WeightMatrix) -> Result<(QuantizedLayer, QuantReport)> {
        if self.codebooks.len() != self.cfg.num_codebooks {
            return Err(Error::InvalidConfig(format!(
                "{} of {} codebooks fitted",
                self.codebooks.len(),
                self.cfg.num_codebooks
            )));
        }
        let cfg = &self.cfg;
        let params = LayerParams {
            rows: self.problem.rows(),
            cols: self.problem.cols(),
            dim: cfg.vector_dim,
            code_bits: cfg.code_bits,
            num_codebooks: cfg.num_codebooks,
            important_cols: self.important_cols,
            seed: cfg.seed,
        };
        let codes = self.code_matrix()?;
        let layer = QuantizedLayer::new(params, self.perm, self.codebooks, codes)?;
        let decoded = layer.decode();
        let (m, d, e, lambda) = (cfg.num_codebooks, cfg.vector_dim, cfg.code_bits, cfg.important_ratio);
        let report = QuantReport {
            proxy_loss_initial: self.trace[0].1,
            proxy_loss_final: self.trace.last().expect("non-empty").1,
            frobenius_error: original.frobenius_distance(&decoded)?,
            avg_bits: avg_bits_crvq(params.rows, params.cols, m, d, e, lambda).avg_bits,
            avg_bits_on_disk: avg_bits_crvq_with(
                params.rows,
                params.cols,
                m,
                d,
                e,
                lambda,
                StorageWidths::ON_DISK,
                RatioRounding::WholeVectors,
            )
            .avg_bits,
            iterations_used: self.rounds,
            trace: self.trace,
        };
        Ok((layer, report))
    }
}

fn add_row_codes(row: &mut [f64], codebook: &Codebook, codes: &[u16]) {
    let dim = codebook.dim();
    for (g, &q) in codes.iter().enumerate() {
        for (o, &c) in row[g * dim..(g + 1) * dim].iter_mut().zip(codebook.entry(q as usize)) {
            *o += c as f64;
        }
    }
}

fn channel_scores(w: &WeightMatrix, calib: &CalibrationSet, cfg: &QuantConfig) -> Result<ImportanceVector> {
    match cfg.metric {
        ImportanceMetric::WeightOnly => Ok(importance_wonly(w)),
        ImportanceMetric::Random => {
            Ok(importance_random(w.cols(), derive_seed(cfg.seed, stream::RANDOM_IMPORTANCE)))
        }
        ImportanceMetric::WeightActivation => {
            let prequant = prequantize(w, cfg)?;
            match importance_wa(w, &prequant, calib, cfg.importance_form) {
                Err(Error::SingularGram) => importance_wa(w, &prequant, calib, ImportanceForm::Direct),
                other => other,
            }
        }
    }
}

/// Single-codebook VQ of `w` in its original column order, no fine-tuning.
pub fn prequantize(w: &WeightMatrix, cfg: &QuantConfig) -> Result<WeightMatrix> {
    let vectors = partition(w, cfg.vector_dim)?;
    let codebook = kmeans_codebook(&vectors, cfg.code_bits, derive_seed(cfg.seed, stream::PREQUANT))?;
    let (_, recon) = encode(&vectors, &codebook)?;
    WeightMatrix::new(w.rows(), w.cols(), recon.data().iter().map(|&v| v as f32).collect())
}

/// Quantizes one weight matrix end to end.
pub fn quantize_layer(
    w: &WeightMatrix,
    calib: &CalibrationSet,
    cfg: &QuantConfig,
) -> Result<(QuantizedLayer, QuantReport)> {
    LayerQuantizer::new(w, calib, cfg)?.run(w)
}
