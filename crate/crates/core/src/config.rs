//! Quantization parameters.

use alloc::format;

use crate::error::{Error, Result};

/// How input channels are ranked before reordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ImportanceMetric {
    /// Prequantization error weighted by activation energy.
    WeightActivation,
    /// Largest squared weight in the channel.
    WeightOnly,
    /// A seeded random ranking.
    Random,
}

/// Which Gram-derived weighting the [`ImportanceMetric::WeightActivation`]
/// score uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ImportanceForm {
    /// `½·Δw²·[XXᵀ]_ii`.
    #[default]
    Direct,
    /// `½·Δw² / [(XXᵀ)⁻¹]_ii`, with a small ridge added before inversion.
    InverseHessian,
}

/// Which columns the permutation sorts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReorderScope {
    /// Every column, by descending score.
    #[default]
    All,
    /// Only the important region is pulled to the front (by descending
    /// score); the other columns keep their original relative order.
    ImportantFirst,
}

/// Optimizer settings for codebook fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FinetuneParams {
    /// Adam steps per outer iteration.
    pub steps: usize,
    /// Initial step size. Halved whenever a step would raise the loss.
    pub learning_rate: f64,
    /// First-moment decay.
    pub beta1: f64,
    /// Second-moment decay.
    pub beta2: f64,
}

impl Default for FinetuneParams {
    fn default() -> Self {
        Self { steps: 25, learning_rate: 1e-4, beta1: 0.90, beta2: 0.95 }
    }
}

/// Everything needed to quantize one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantConfig {
    /// Columns per vector (`d`).
    pub vector_dim: usize,
    /// Bits per code, so every codebook has `2^code_bits` entries (`e`).
    pub code_bits: u32,
    /// Total number of codebooks: one basic plus `num_codebooks - 1` extended (`m`).
    pub num_codebooks: usize,
    /// Fraction of input channels that receive the extended codebooks (`λ`).
    pub important_ratio: f64,
    /// Channel ranking used to pick the important channels.
    pub metric: ImportanceMetric,
    /// Weighting used by the weight-activation metric.
    pub importance_form: ImportanceForm,
    /// Which columns get sorted.
    pub reorder: ReorderScope,
    /// Root seed of every randomized step.
    pub seed: u64,
    /// The refinement loop stops once the proxy loss falls below this.
    pub epsilon: f64,
    /// Cap on fine-tune/beam rounds.
    pub max_outer_iters: usize,
    /// Beam width of code re-selection; `1` is cyclic coordinate descent.
    pub beam_width: usize,
    /// Fine-tuning optimizer.
    pub finetune: FinetuneParams,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            vector_dim: 8,
            code_bits: 8,
            num_codebooks: 4,
            important_ratio: 0.02,
            metric: ImportanceMetric::WeightActivation,
            importance_form: ImportanceForm::Direct,
            reorder: ReorderScope::All,
            seed: 0,
            epsilon: 0.0,
            max_outer_iters: 4,
            beam_width: 1,
            finetune: FinetuneParams::default(),
        }
    }
}

impl QuantConfig {
    /// Checks every range constraint that does not depend on the matrix.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidConfig(msg));
        if self.vector_dim == 0 || self.vector_dim > u16::MAX as usize {
            return bad(format!("vector dimension must be in 1..=65535, got {}", self.vector_dim));
        }
        if !(1..=16).contains(&self.code_bits) {
            return bad(format!("code bits must be in 1..=16, got {}", self.code_bits));
        }
        if self.num_codebooks == 0 || self.num_codebooks > u16::MAX as usize {
            return bad(format!("codebook count must be in 1..=65535, got {}", self.num_codebooks));
        }
        if !(0.0..=1.0).contains(&self.important_ratio) {
            return bad(format!("lambda must be in [0, 1], got {}", self.important_ratio));
        }
        if !(self.epsilon >= 0.0) {
            return bad(format!("epsilon must be non-negative, got {}", self.epsilon));
        }
        if self.max_outer_iters == 0 {
            return bad(format!("max outer iterations must be positive"));
        }
        if self.beam_width == 0 {
            return bad(format!("beam width must be positive"));
        }
        let ft = &self.finetune;
        if !(ft.learning_rate > 0.0) || !(0.0..1.0).contains(&ft.beta1) || !(0.0..1.0).contains(&ft.beta2)
        {
            return bad(format!("invalid fine-tune parameters {ft:?}"));
        }
        Ok(())
    }

    /// Checks that `cols` splits into whole vectors.
    pub fn check_columns(&self, cols: usize) -> Result<()> {
        if cols % self.vector_dim != 0 {
            return Err(crate::error::dim_err!(
                "N not divisible by d: N={cols}, d={}",
                self.vector_dim
            ));
        }
        Ok(())
    }
}
