use alloc::vec;
use alloc::vec::Vec;

use super::{reconstruct, CodeMatrix, Codebook};
use crate::config::FinetuneParams;
use crate::error::{dim_err, Error, Result};
use crate::linalg::dot;
use crate::matrix::{CalibrationSet, WeightMatrix};

/// A layer's proxy objective `||WX - ŴX||² = Σ_r Δ_r (XXᵀ) Δ_rᵀ` with
/// `Δ = W - Ŵ`, in whatever column order `weights` and the Gram share.
#[derive(Debug, Clone)]
pub struct ProxyProblem {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    gram: Vec<f64>,
}

impl ProxyProblem {
    /// Pairs a weight matrix with calibration data over the same channels.
    pub fn new(w: &WeightMatrix, calib: &CalibrationSet) -> Result<Self> {
        Self::from_parts(w.rows(), w.cols(), w.to_f64(), calib.gram().to_vec())
    }

    pub(crate) fn from_parts(
        rows: usize,
        cols: usize,
        weights: Vec<f64>,
        gram: Vec<f64>,
    ) -> Result<Self> {
        if gram.len() != cols * cols || weights.len() != rows * cols {
            return Err(dim_err!(
                "{rows}x{cols} weights need a {cols}x{cols} gram, got {} values",
                gram.len()
            ));
        }
        let trace: f64 = (0..cols).map(|i| gram[i * cols + i]).sum();
        if !(trace > 0.0) {
            return Err(Error::DegenerateCalibration("XXᵀ is the zero matrix".into()));
        }
        Ok(Self { rows, cols, weights, gram })
    }

    /// Rows `M`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Columns `N`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn gram(&self) -> &[f64] {
        &self.gram
    }

    /// Proxy loss of a reconstruction given as flat row-major values.
    pub fn loss_of(&self, recon: &[f64]) -> f64 {
        (0..self.rows).map(|r| self.row_loss(r, recon)).sum()
    }

    /// Proxy loss contribution of row `r`.
    pub fn row_loss(&self, r: usize, recon: &[f64]) -> f64 {
        let n = self.cols;
        let delta: Vec<f64> = self.weights[r * n..(r + 1) * n]
            .iter()
            .zip(&recon[r * n..(r + 1) * n])
            .map(|(a, b)| a - b)
            .collect();
        let mut total = 0.0;
        for (i, gi) in self.gram.chunks_exact(n).enumerate() {
            total += delta[i] * dot(gi, &delta);
        }
        total
    }

    /// Proxy loss of `codes` looked up in `tables` (flat `f64` entry tables).
    pub fn loss(&self, tables: &[Vec<f64>], codes: &CodeMatrix, dim: usize) -> f64 {
        self.loss_of(&reconstruct(tables, codes, dim))
    }

    /// Loss and its gradient with respect to every codebook value, codes fixed.
    ///
    /// `∂L/∂Ŵ = -2 Δ G`; each entry collects the columns of every vector
    /// whose code points at it.
    pub fn loss_and_gradient(
        &self,
        tables: &[Vec<f64>],
        codes: &CodeMatrix,
        dim: usize,
    ) -> (f64, Vec<Vec<f64>>) {
        let n = self.cols;
        let recon = reconstruct(tables, codes, dim);
        let mut grads: Vec<Vec<f64>> = tables.iter().map(|t| vec![0.0; t.len()]).collect();
        let mut loss = 0.0;
        let mut delta = vec![0.0; n];
        let mut dl = vec![0.0; n];
        for r in 0..self.rows {
            for ((d, w), y) in delta.iter_mut().zip(&self.weights[r * n..]).zip(&recon[r * n..]) {
                *d = w - y;
            }
            for (i, gi) in self.gram.chunks_exact(n).enumerate() {
                let gd = dot(gi, &delta);
                loss += delta[i] * gd;
                dl[i] = -2.0 * gd;
            }
            for g in 0..codes.groups() {
                let seg = &dl[g * dim..(g + 1) * dim];
                for (t, grad) in grads.iter_mut().enumerate().take(codes.active_codebooks(g)) {
                    let q = codes.code(t, r, g) as usize;
                    for (acc, v) in grad[q * dim..(q + 1) * dim].iter_mut().zip(seg) {
                        *acc += v;
                    }
                }
            }
        }
        (loss, grads)
    }
}

/// Result of [`finetune_codebooks`].
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    /// Updated codebooks.
    pub codebooks: Vec<Codebook>,
    /// Loss before the first step, then after every step (accepted or not).
    pub losses: Vec<f64>,
}

impl FinetuneOutcome {
    /// Last recorded loss.
    pub fn final_loss(&self) -> f64 {
        *self.losses.last().expect("trace starts with the initial loss")
    }
}

/// Adam on the proxy loss over all codebook entries jointly, codes frozen.
///
/// Parameters are kept at `f32` precision, so the loss that is tracked is the
/// loss of the codebooks that will actually be stored. A step that would raise
/// the loss is rejected and the step size halved, which makes the trace
/// non-increasing. Stops at `max_iters` steps, when the loss drops below
/// `epsilon`, or when the gradient vanishes.
pub fn finetune_codebooks(
    problem: &ProxyProblem,
    codebooks: &[Codebook],
    codes: &CodeMatrix,
    epsilon: f64,
    max_iters: usize,
    params: &FinetuneParams,
) -> Result<FinetuneOutcome> {
    if codebooks.len() != codes.num_codebooks() {
        return Err(dim_err!(
            "{} codebooks for {} code streams",
            codebooks.len(),
            codes.num_codebooks()
        ));
    }
    let dim = codebooks[0].dim();
    if codes.groups() * dim != problem.cols || codes.rows() != problem.rows {
        return Err(dim_err!("codes do not cover the {}x{} layer", problem.rows, problem.cols));
    }

    let mut tables: Vec<Vec<f64>> = codebooks.iter().map(Codebook::to_f64).collect();
    let mut first = tables.iter().map(|t| vec![0.0; t.len()]).collect::<Vec<_>>();
    let mut second = first.clone();
    let mut lr = params.learning_rate;
    let (mut loss, mut grads) = problem.loss_and_gradient(&tables, codes, dim);
    let mut losses = vec![loss];

    for step in 1..=max_iters {
        if loss < epsilon || grads.iter().flatten().all(|&g| g == 0.0) || lr < 1e-12 * params.learning_rate {
            break;
        }
        let bias1 = 1.0 - libm::pow(params.beta1, step as f64);
        let bias2 = 1.0 - libm::pow(params.beta2, step as f64);
        let mut candidate = tables.clone();
        for t in 0..tables.len() {
            for i in 0..tables[t].len() {
                let g = grads[t][i];
                first[t][i] = params.beta1 * first[t][i] + (1.0 - params.beta1) * g;
                second[t][i] = params.beta2 * second[t][i] + (1.0 - params.beta2) * g * g;
                let m_hat = first[t][i] / bias1;
                let v_hat = second[t][i] / bias2;
                let next = tables[t][i] - lr * m_hat / (libm::sqrt(v_hat) + 1e-12);
                candidate[t][i] = next as f32 as f64;
            }
        }
        let (next_loss, next_grads) = problem.loss_and_gradient(&candidate, codes, dim);
        if next_loss <= loss {
            tables = candidate;
            loss = next_loss;
            grads = next_grads;
        } else {
            lr *= 0.5;
        }
        losses.push(loss);
    }

    let codebooks = tables
        .iter()
        .zip(codebooks)
        .map(|(t, cb)| Codebook::new(dim, cb.bits(), t.iter().map(|&v| v as f32).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok(FinetuneOutcome { codebooks, losses })
}
