//! Directory-level quantization and ablation grids.
//!
//! Layers are independent; they run on a pool of `jobs` threads and results
//! are gathered in file-name order, so outputs do not depend on `jobs`.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crvq_core::{quantize_layer, CalibrationSet, ImportanceMetric, QuantConfig, WeightMatrix};

use crate::format::{self, FormatError};
use crate::settings::{metric_name, CalibSource};

/// Extension of dense matrix files.
pub const MATRIX_EXT: &str = "crvqt";
/// Extension of quantized layer files.
pub const LAYER_EXT: &str = "crvqp";
/// Summary written next to the quantized layers.
pub const SUMMARY_FILE: &str = "summary.json";
/// Synthetic calibration uses `SYNTHETIC_SAMPLES_PER_DIM · d` activation columns.
pub const SYNTHETIC_SAMPLES_PER_DIM: usize = 4;

/// Settings shared by every layer of a batch.
#[derive(Debug, Clone)]
pub struct BatchOptions {
    pub config: QuantConfig,
    pub calib: CalibSource,
    pub jobs: usize,
    /// Record wall-clock seconds per layer. Off by default so that summaries
    /// are reproducible byte for byte.
    pub timings: bool,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self { config: QuantConfig::default(), calib: CalibSource::Synthetic, jobs: 1, timings: false }
    }
}

/// Per-layer line of the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSummary {
    pub file: String,
    #[serde(rename = "M")]
    pub rows: usize,
    #[serde(rename = "N")]
    pub cols: usize,
    pub avg_bits: f64,
    pub avg_bits_on_disk: f64,
    pub proxy_loss_initial: f64,
    pub proxy_loss_final: f64,
    pub frobenius_error: f64,
    pub iterations: usize,
    pub seconds: Option<f64>,
}

/// A layer that failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileError {
    pub file: String,
    pub error: String,
}

/// Result of [`quantize_dir`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub layers: Vec<LayerSummary>,
    pub errors: Vec<FileError>,
}

/// Failures that stop a whole batch.
#[derive(Debug, thiserror::Error)]
pub enum BatchError {
    #[error("invalid configuration: {0}")]
    Config(#[from] crvq_core::Error),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("calibration {path}: {source}")]
    Calibration {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

impl BatchError {
    fn io(path: &Path) -> impl FnOnce(io::Error) -> Self + '_ {
        move |source| Self::Io { path: path.into(), source }
    }
}

/// Dense matrix files in `dir`, sorted by file name.
pub fn list_inputs(dir: &Path) -> io::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == MATRIX_EXT) {
            out.push(path);
        }
    }
    out.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

enum Calibration {
    Synthetic,
    Shared(CalibrationSet),
    PerLayer(PathBuf),
}

impl Calibration {
    fn resolve(source: &CalibSource) -> Result<Self, BatchError> {
        Ok(match source {
            CalibSource::Synthetic => Self::Synthetic,
            CalibSource::Dir(dir) => Self::PerLayer(dir.clone()),
            CalibSource::File(path) => {
                let x = format::load_matrix(path)
                    .map_err(|source| BatchError::Calibration { path: path.clone(), source })?;
                Self::Shared(CalibrationSet::from_activations(x))
            }
        })
    }

    fn for_layer(&self, input: &Path, w: &WeightMatrix, cfg: &QuantConfig) -> Result<CalibrationSet, String> {
        let loaded;
        let calib = match self {
            Self::Synthetic => {
                let samples = SYNTHETIC_SAMPLES_PER_DIM * cfg.vector_dim;
                return Ok(CalibrationSet::synthetic(w.cols(), samples, cfg.seed));
            }
            Self::Shared(c) => c,
            Self::PerLayer(dir) => {
                let path = dir.join(format!("{}.{MATRIX_EXT}", stem(input)));
                let x = format::load_matrix(&path).map_err(|e| format!("calibration {}: {e}", path.display()))?;
                loaded = CalibrationSet::from_activations(x);
                &loaded
            }
        };
        if calib.dim() != w.cols() {
            return Err(format!("calibration has {} rows, layer has {} columns", calib.dim(), w.cols()));
        }
        Ok(calib.clone())
    }
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, BatchError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| BatchError::Pool(e.to_string()))
}

fn quantize_file(
    input: &Path,
    output_dir: &Path,
    calib: &Calibration,
    opts: &BatchOptions,
) -> Result<LayerSummary, String> {
    let start = Instant::now();
    let cfg = &opts.config;
    let w = format::load_matrix(input).map_err(|e| e.to_string())?;
    cfg.check_columns(w.cols()).map_err(|e| e.to_string())?;
    let x = calib.for_layer(input, &w, cfg)?;
    let (layer, report) = quantize_layer(&w, &x, cfg).map_err(|e| e.to_string())?;
    let out = output_dir.join(format!("{}.{LAYER_EXT}", stem(input)));
    format::save_quantized(&layer, &out).map_err(|e| format!("{}: {e}", out.display()))?;
    Ok(LayerSummary {
        file: file_name(input),
        rows: w.rows(),
        cols: w.cols(),
        avg_bits: report.avg_bits,
        avg_bits_on_disk: report.avg_bits_on_disk,
        proxy_loss_initial: report.proxy_loss_initial,
        proxy_loss_final: report.proxy_loss_final,
        frobenius_error: report.frobenius_error,
        iterations: report.iterations_used,
        seconds: opts.timings.then(|| start.elapsed().as_secs_f64()),
    })
}

/// Quantizes every `.crvqt` file in `input_dir` into `<stem>.crvqp` in
/// `output_dir` and writes [`SUMMARY_FILE`] there. Per-layer failures are
/// recorded in the summary and do not stop the run.
pub fn quantize_dir(input_dir: &Path, output_dir: &Path, opts: &BatchOptions) -> Result<Summary, BatchError> {
    opts.config.validate()?;
    let inputs = list_inputs(input_dir).map_err(BatchError::io(input_dir))?;
    fs::create_dir_all(output_dir).map_err(BatchError::io(output_dir))?;
    let calib = Calibration::resolve(&opts.calib)?;

    let results: Vec<_> = pool(opts.jobs)?
        .install(|| inputs.par_iter().map(|p| quantize_file(p, output_dir, &calib, opts)).collect());

    let mut summary = Summary::default();
    for (path, result) in inputs.iter().zip(results) {
        match result {
            Ok(layer) => summary.layers.push(layer),
            Err(error) => summary.errors.push(FileError { file: file_name(path), error }),
        }
    }
    let summary_path = output_dir.join(SUMMARY_FILE);
    let mut json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    json.push('\n');
    fs::write(&summary_path, json).map_err(BatchError::io(&summary_path))?;
    Ok(summary)
}

/// Axes of an ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationGrid {
    pub ratios: Vec<f64>,
    pub codebooks: Vec<usize>,
    pub metrics: Vec<ImportanceMetric>,
}

impl AblationGrid {
    /// Grid points in output order: metric, then codebook count, then ratio.
    pub fn points(&self) -> Vec<(ImportanceMetric, usize, f64)> {
        let mut out = Vec::new();
        for &metric in &self.metrics {
            for &m in &self.codebooks {
                for &ratio in &self.ratios {
                    out.push((metric, m, ratio));
                }
            }
        }
        out
    }
}

/// One grid point on one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub file: String,
    pub metric: &'static str,
    pub m: usize,
    pub lambda: f64,
    pub d: usize,
    pub e: u32,
    pub seed: u64,
    pub important_cols: usize,
    pub proxy_loss_initial: f64,
    pub proxy_loss_final: f64,
    pub frobenius_error: f64,
    pub avg_bits: f64,
}

impl AblationRow {
    /// Header of [`AblationRow::csv_row`].
    pub const CSV_HEADER: &'static str =
        "file,metric,m,lambda,d,e,seed,important_cols,proxy_loss_initial,proxy_loss_final,frobenius_error,avg_bits";

    /// One CSV line.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&self.file),
            self.metric,
            self.m,
            self.lambda,
            self.d,
            self.e,
            self.seed,
            self.important_cols,
            self.proxy_loss_initial,
            self.proxy_loss_final,
            self.frobenius_error,
            self.avg_bits
        )
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Result of [`ablate_dir`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    pub errors: Vec<FileError>,
}

impl Ablation {
    /// The full CSV document, header included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(AblationRow::CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_row());
            out.push('\n');
        }
        out
    }
}

fn ablate_point(
    w: &WeightMatrix,
    x: &CalibrationSet,
    file: &str,
    base: &QuantConfig,
    (metric, m, ratio): (ImportanceMetric, usize, f64),
) -> Result<AblationRow, String> {
    let cfg = QuantConfig { metric, num_codebooks: m, important_ratio: ratio, ..base.clone() };
    cfg.validate().map_err(|e| e.to_string())?;
    let (layer, report) = quantize_layer(w, x, &cfg).map_err(|e| e.to_string())?;
    Ok(AblationRow {
        file: file.to_string(),
        metric: metric_name(metric),
        m,
        lambda: ratio,
        d: cfg.vector_dim,
        e: cfg.code_bits,
        seed: cfg.seed,
        important_cols: layer.params().important_cols,
        proxy_loss_initial: report.proxy_loss_initial,
        proxy_loss_final: report.proxy_loss_final,
        frobenius_error: report.frobenius_error,
        avg_bits: report.avg_bits,
    })
}

/// Runs every grid point on every layer in `input_dir` with the seed and
/// calibration of `opts`. Rows come out by file name, then grid order.
pub fn ablate_dir(input_dir: &Path, opts: &BatchOptions, grid: &AblationGrid) -> Result<Ablation, BatchError> {
    opts.config.validate()?;
    for &(metric, m, ratio) in &grid.points() {
        QuantConfig { metric, num_codebooks: m, important_ratio: ratio, ..opts.config.clone() }.validate()?;
    }
    let inputs = list_inputs(input_dir).map_err(BatchError::io(input_dir))?;
    let calib = Calibration::resolve(&opts.calib)?;
    let points = grid.points();
    let cfg = &opts.config;

    let results: Vec<Result<Vec<AblationRow>, String>> = pool(opts.jobs)?.install(|| {
        inputs
            .par_iter()
            .map(|path| {
                let w = format::load_matrix(path).map_err(|e| e.to_string())?;
                cfg.check_columns(w.cols()).map_err(|e| e.to_string())?;
                let x = calib.for_layer(path, &w, cfg)?;
                let name = file_name(path);
                points.par_iter().map(|&p| ablate_point(&w, &x, &name, cfg, p)).collect()
            })
            .collect()
    });

    let mut out = Ablation::default();
    for (path, result) in inputs.iter().zip(results) {
        match result {
            Ok(rows) => out.rows.extend(rows),
            Err(error) => out.errors.push(FileError { file: file_name(path), error }),
        }
    }
    Ok(out)
}
